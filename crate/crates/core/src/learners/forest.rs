use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::RegressionTree;
use super::Sample;
use crate::seeding;

pub(super) struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

/// Bagged regression trees; the score is the mean tree output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<RegressionTree>,
}

impl Forest {
    #[inline]
    pub fn score(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.score(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.trees.iter().all(RegressionTree::is_finite)
    }
}

pub(super) fn fit(sample: &Sample<'_>, params: ForestParams, seed: u64) -> Forest {
    let n = sample.len();
    let d = sample.dim();
    let max_features = params
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d.max(1));
    let trees = (0..params.n_trees.max(1))
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(&[seed, t as u64]));
            let weights = if params.bootstrap {
                let mut counts = vec![0.0; n];
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1.0;
                }
                counts
            } else {
                vec![1.0; n]
            };
            RegressionTree::fit(
                sample,
                Some(&weights),
                params.max_depth,
                params.min_leaf,
                Some(max_features),
                Some(&mut rng),
            )
        })
        .collect();
    Forest { trees }
}
