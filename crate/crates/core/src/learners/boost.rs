//! Stagewise boosting over decision stumps.
//!
//! `Discrete` is AdaBoost with exponential loss and ±1 stumps. `Logit` is the
//! two-class LogitBoost update (Newton steps on the logistic loss with
//! weighted least-squares stumps). Both report `sigmoid(2F)`, so a score of
//! 0.5 sits on the decision boundary `F = 0`.

use serde::{Deserialize, Serialize};

use super::linear::sigmoid;
use super::tree::RegressionTree;
use super::Sample;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostVariant {
    #[default]
    Discrete,
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub below: f64,
    pub above: f64,
}

impl Stump {
    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        if x[self.feature] < self.threshold {
            self.below
        } else {
            self.above
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedStumps {
    pub variant: BoostVariant,
    pub bias: f64,
    /// Each stump's outputs already carry its round weight.
    pub stumps: Vec<Stump>,
}

impl BoostedStumps {
    #[inline]
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.bias + self.stumps.iter().map(|s| s.eval(x)).sum::<f64>()
    }

    #[inline]
    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(2.0 * self.margin(x))
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite()
            && self
                .stumps
                .iter()
                .all(|s| s.threshold.is_finite() && s.below.is_finite() && s.above.is_finite())
    }
}

pub(super) fn fit(sample: &Sample<'_>, rounds: usize, variant: BoostVariant) -> BoostedStumps {
    match variant {
        BoostVariant::Discrete => fit_discrete(sample, rounds),
        BoostVariant::Logit => fit_logit(sample, rounds),
    }
}

const ALPHA_CAP: f64 = 10.0;

/// Weighted misclassification stump for ±1 labels. The constant classifier
/// (no split) is always a candidate.
fn classification_stump(sample: &Sample<'_>, signs: &[f64], weights: &[f64]) -> (Stump, f64) {
    let (mut pos_tot, mut neg_tot) = (0.0, 0.0);
    for (s, w) in signs.iter().zip(weights) {
        if *s > 0.0 {
            pos_tot += w;
        } else {
            neg_tot += w;
        }
    }
    let constant = if pos_tot >= neg_tot { 1.0 } else { -1.0 };
    let mut best = Stump {
        feature: 0,
        threshold: 0.0,
        below: constant,
        above: constant,
    };
    let mut best_err = pos_tot.min(neg_tot);

    let n = sample.len();
    let mut order: Vec<usize> = (0..n).collect();
    for f in 0..sample.dim() {
        order.sort_by(|&a, &b| sample.x(a)[f].total_cmp(&sample.x(b)[f]));
        let (mut pos_l, mut neg_l) = (0.0, 0.0);
        for k in 0..n.saturating_sub(1) {
            let i = order[k];
            if signs[i] > 0.0 {
                pos_l += weights[i];
            } else {
                neg_l += weights[i];
            }
            let (lo, hi) = (sample.x(i)[f], sample.x(order[k + 1])[f]);
            if lo == hi {
                continue;
            }
            let (pos_r, neg_r) = (pos_tot - pos_l, neg_tot - neg_l);
            let err = pos_l.min(neg_l) + pos_r.min(neg_r);
            if err < best_err - 1e-15 {
                let mid = 0.5 * (lo + hi);
                best_err = err;
                best = Stump {
                    feature: f,
                    threshold: if mid > lo { mid } else { hi },
                    below: if pos_l >= neg_l { 1.0 } else { -1.0 },
                    above: if pos_r >= neg_r { 1.0 } else { -1.0 },
                };
            }
        }
    }
    (best, best_err)
}

fn fit_discrete(sample: &Sample<'_>, rounds: usize) -> BoostedStumps {
    let n = sample.len();
    let signs: Vec<f64> = sample
        .targets
        .iter()
        .map(|&t| if t >= 0.5 { 1.0 } else { -1.0 })
        .collect();
    let mut weights = vec![1.0 / n as f64; n];
    let mut stumps = Vec::new();
    for _ in 0..rounds {
        let (stump, err) = classification_stump(sample, &signs, &weights);
        let total: f64 = weights.iter().sum();
        let eps = (err / total).clamp(0.0, 1.0);
        if eps >= 0.5 {
            break;
        }
        let alpha = (0.5 * ((1.0 - eps) / eps.max(1e-300)).ln()).min(ALPHA_CAP);
        for (i, w) in weights.iter_mut().enumerate() {
            *w *= (-alpha * signs[i] * stump.eval(sample.x(i))).exp();
        }
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);
        stumps.push(Stump {
            below: alpha * stump.below,
            above: alpha * stump.above,
            ..stump
        });
        if eps == 0.0 {
            break;
        }
    }
    BoostedStumps {
        variant: BoostVariant::Discrete,
        bias: 0.0,
        stumps,
    }
}

const Z_CLIP: f64 = 4.0;

fn fit_logit(sample: &Sample<'_>, rounds: usize) -> BoostedStumps {
    let n = sample.len();
    let ys: Vec<f64> = sample
        .targets
        .iter()
        .map(|&t| if t >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    let mut margin = vec![0.0; n];
    let mut stumps = Vec::new();
    for _ in 0..rounds {
        let mut z = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for i in 0..n {
            let p = sigmoid(2.0 * margin[i]);
            let wi = (p * (1.0 - p)).max(1e-10);
            z.push(((ys[i] - p) / wi).clamp(-Z_CLIP, Z_CLIP));
            w.push(wi);
        }
        let working = Sample::with_targets(sample.data, sample.rows, z);
        let tree = RegressionTree::fit(&working, Some(&w), 1, 1, None, None);
        let stump = match tree.nodes.as_slice() {
            [super::tree::TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            }, ..] => {
                let value = |k: usize| match tree.nodes[k] {
                    super::tree::TreeNode::Leaf { value } => value,
                    _ => 0.0,
                };
                Stump {
                    feature: *feature,
                    threshold: *threshold,
                    below: 0.5 * value(*left),
                    above: 0.5 * value(*right),
                }
            }
            _ => {
                let c = 0.5 * tree.score(sample.x(0));
                Stump {
                    feature: 0,
                    threshold: 0.0,
                    below: c,
                    above: c,
                }
            }
        };
        let mut moved = 0.0f64;
        for (i, m) in margin.iter_mut().enumerate() {
            let step = stump.eval(sample.x(i));
            moved = moved.max(step.abs());
            *m += step;
        }
        stumps.push(stump);
        if moved < 1e-12 {
            break;
        }
    }
    BoostedStumps {
        variant: BoostVariant::Logit,
        bias: 0.0,
        stumps,
    }
}
