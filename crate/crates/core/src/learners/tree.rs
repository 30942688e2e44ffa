use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Piecewise-constant CART regressor. Routing is `x < threshold` → left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

struct Builder<'s, 'a> {
    sample: &'s Sample<'a>,
    weights: Vec<f64>,
    max_depth: usize,
    min_leaf: usize,
    max_features: Option<usize>,
    rng: Option<&'s mut ChaCha8Rng>,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl RegressionTree {
    /// Greedy squared-error tree. `weights` defaults to all ones; rows with
    /// zero weight are ignored. With `max_features`, each split considers a
    /// random feature subset drawn from `rng`.
    pub fn fit(
        sample: &Sample<'_>,
        weights: Option<&[f64]>,
        max_depth: usize,
        min_leaf: usize,
        max_features: Option<usize>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Self {
        let weights = weights.map_or_else(|| vec![1.0; sample.len()], <[f64]>::to_vec);
        let idx: Vec<usize> = (0..sample.len()).filter(|&i| weights[i] > 0.0).collect();
        let mut b = Builder {
            sample,
            weights,
            max_depth,
            min_leaf: min_leaf.max(1),
            max_features,
            rng,
            nodes: Vec::new(),
        };
        b.build(idx, 0);
        RegressionTree { nodes: b.nodes }
    }

    #[inline]
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.nodes.iter().all(|n| match n {
            TreeNode::Leaf { value } => value.is_finite(),
            TreeNode::Split { threshold, .. } => threshold.is_finite(),
        })
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

impl Builder<'_, '_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        let (mut sw, mut swy) = (0.0, 0.0);
        for &i in idx {
            sw += self.weights[i];
            swy += self.weights[i] * self.sample.targets[i];
        }
        if sw > 0.0 {
            swy / sw
        } else {
            0.0
        }
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: self.leaf_value(&idx),
        });
        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&idx) else {
            return id;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.sample.x(i)[best.feature] < best.threshold);
        let left = self.build(left_idx, depth + 1);
        let right = self.build(right_idx, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.sample.dim();
        let mut all: Vec<usize> = (0..d).collect();
        match (self.max_features, self.rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < d => {
                for i in 0..k {
                    let j = rng.random_range(i..d);
                    all.swap(i, j);
                }
                all.truncate(k);
                all.sort_unstable();
                all
            }
            _ => all,
        }
    }

    fn best_split(&mut self, idx: &[usize]) -> Option<BestSplit> {
        let (mut w_tot, mut s_tot, mut q_tot) = (0.0, 0.0, 0.0);
        for &i in idx {
            let (w, y) = (self.weights[i], self.sample.targets[i]);
            w_tot += w;
            s_tot += w * y;
            q_tot += w * y * y;
        }
        let parent = s_tot * s_tot / w_tot;
        let min_gain = 1e-12 * (q_tot.abs() + 1.0);
        let mut best: Option<BestSplit> = None;
        let mut order = idx.to_vec();
        for f in self.candidate_features() {
            order.sort_by(|&a, &b| self.sample.x(a)[f].total_cmp(&self.sample.x(b)[f]));
            let (mut wl, mut sl) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let i = order[k];
                wl += self.weights[i];
                sl += self.weights[i] * self.sample.targets[i];
                let (lo, hi) = (self.sample.x(i)[f], self.sample.x(order[k + 1])[f]);
                if lo == hi || k + 1 < self.min_leaf || order.len() - k - 1 < self.min_leaf {
                    continue;
                }
                let wr = w_tot - wl;
                if wl <= 0.0 || wr <= 0.0 {
                    continue;
                }
                let sr = s_tot - sl;
                let gain = sl * sl / wl + sr * sr / wr - parent;
                if gain > min_gain && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid > lo { mid } else { hi };
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}
