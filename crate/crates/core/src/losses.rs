//! Losses over scored sets: additive mean losses and the non-additive 1 − AUC.
//!
//! A joint loss over disjoint parts is always computed on the concatenation of
//! the parts, never by combining per-part values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scores at or above this value predict class 1.
pub const CLASS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LossError {
    #[error("AUC undefined: labels contain a single class")]
    AucUndefined,
    #[error("loss of an empty set is undefined")]
    Empty,
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "error")]
    ErrorRate,
    #[serde(rename = "auc")]
    OneMinusAuc,
    #[serde(rename = "mae")]
    Mae,
    #[serde(rename = "mse")]
    Mse,
}

impl LossKind {
    pub fn additive(self) -> bool {
        !matches!(self, LossKind::OneMinusAuc)
    }

    /// Losses that threshold or rank against 0/1 labels.
    pub fn needs_binary_labels(self) -> bool {
        matches!(self, LossKind::ErrorRate | LossKind::OneMinusAuc)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::ErrorRate => "error",
            LossKind::OneMinusAuc => "auc",
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
        }
    }

    /// Per-sample loss for additive kinds. 1 − AUC has none; its 0-1
    /// surrogate is used instead.
    #[inline]
    pub fn pointwise(self, score: f64, label: f64) -> f64 {
        match self {
            LossKind::ErrorRate | LossKind::OneMinusAuc => {
                if threshold(score) != label {
                    1.0
                } else {
                    0.0
                }
            }
            LossKind::Mae => (score - label).abs(),
            LossKind::Mse => (score - label) * (score - label),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "error" => Ok(LossKind::ErrorRate),
            "auc" => Ok(LossKind::OneMinusAuc),
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            other => Err(format!(
                "unknown loss '{other}' (expected error, auc, mae or mse)"
            )),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub additive: bool,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            additive: kind.additive(),
        }
    }
}

impl From<LossKind> for LossSpec {
    fn from(kind: LossKind) -> Self {
        Self::new(kind)
    }
}

#[inline]
pub fn threshold(score: f64) -> f64 {
    if score >= CLASS_THRESHOLD {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<f64>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<f64>) -> Result<Self, LossError> {
        if scores.len() != labels.len() {
            return Err(LossError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn concat(parts: &[&ScoredSet]) -> ScoredSet {
        let mut out = ScoredSet::default();
        for p in parts {
            out.scores.extend_from_slice(&p.scores);
            out.labels.extend_from_slice(&p.labels);
        }
        out
    }

    /// True when the labels contain both 0-class and 1-class members.
    pub fn has_both_classes(&self) -> bool {
        let pos = self.labels.iter().filter(|&&y| y >= CLASS_THRESHOLD).count();
        pos > 0 && pos < self.labels.len()
    }
}

/// Mann–Whitney AUC: fraction of (negative, positive) pairs ranked correctly,
/// ties counting one half. Labels ≥ 0.5 are positives.
pub fn auc(scored: &ScoredSet) -> Result<f64, LossError> {
    auc_of(&scored.scores, &scored.labels)
}

pub fn auc_of(scores: &[f64], labels: &[f64]) -> Result<f64, LossError> {
    if scores.len() != labels.len() {
        return Err(LossError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the number of correctly ordered pairs, so ties stay integral
    let mut twice_correct: u128 = 0;
    let mut neg_below: u64 = 0;
    let (mut n_pos, mut n_neg) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] >= CLASS_THRESHOLD {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_correct += 2 * pos as u128 * neg_below as u128 + pos as u128 * neg as u128;
        neg_below += neg;
        n_pos += pos;
        n_neg += neg;
        i = j;
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(LossError::AucUndefined);
    }
    Ok(twice_correct as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

pub fn loss(spec: LossSpec, scored: &ScoredSet) -> Result<f64, LossError> {
    loss_of(spec.kind, &scored.scores, &scored.labels)
}

pub fn loss_of(kind: LossKind, scores: &[f64], labels: &[f64]) -> Result<f64, LossError> {
    if scores.len() != labels.len() {
        return Err(LossError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(LossError::Empty);
    }
    match kind {
        LossKind::OneMinusAuc => Ok(1.0 - auc_of(scores, labels)?),
        additive => {
            let total: f64 = scores
                .iter()
                .zip(labels)
                .map(|(&s, &y)| additive.pointwise(s, y))
                .sum();
            Ok(total / scores.len() as f64)
        }
    }
}

/// Loss used for comparisons local to one node: 1 − AUC falls back to the
/// error rate when the set has a single class. The flag reports the fallback.
pub fn node_loss(kind: LossKind, scores: &[f64], labels: &[f64]) -> Result<(f64, bool), LossError> {
    match loss_of(kind, scores, labels) {
        Err(LossError::AucUndefined) => Ok((loss_of(LossKind::ErrorRate, scores, labels)?, true)),
        other => other.map(|v| (v, false)),
    }
}

/// Effective kind for a node-local comparison over `labels`.
pub fn effective_kind(kind: LossKind, labels: &[f64]) -> LossKind {
    if kind == LossKind::OneMinusAuc {
        let pos = labels.iter().filter(|&&y| y >= CLASS_THRESHOLD).count();
        if pos == 0 || pos == labels.len() {
            return LossKind::ErrorRate;
        }
    }
    kind
}

/// Scores of one part pre-sorted for repeated joint-AUC evaluation against
/// other parts. Merging two sorted parts is equivalent to sorting their
/// concatenation.
#[derive(Debug, Clone, Default)]
pub struct RankedScores {
    sorted: Vec<(f64, bool)>,
}

impl RankedScores {
    pub fn new(scores: &[f64], labels: &[f64]) -> Self {
        let mut sorted: Vec<(f64, bool)> = scores
            .iter()
            .zip(labels)
            .map(|(&s, &y)| (s, y >= CLASS_THRESHOLD))
            .collect();
        sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        Self { sorted }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

/// AUC of the union of two disjoint parts.
pub fn joint_auc(a: &RankedScores, b: &RankedScores) -> Result<f64, LossError> {
    let (xs, ys) = (&a.sorted, &b.sorted);
    let (mut i, mut j) = (0, 0);
    let mut twice_correct: u128 = 0;
    let mut neg_below: u64 = 0;
    let (mut n_pos, mut n_neg) = (0u64, 0u64);
    while i < xs.len() || j < ys.len() {
        let current = match (xs.get(i), ys.get(j)) {
            (Some(x), Some(y)) => {
                if x.0.total_cmp(&y.0).is_le() {
                    x.0
                } else {
                    y.0
                }
            }
            (Some(x), None) => x.0,
            (None, Some(y)) => y.0,
            (None, None) => unreachable!(),
        };
        let (mut pos, mut neg) = (0u64, 0u64);
        while i < xs.len() && xs[i].0 == current {
            if xs[i].1 { pos += 1 } else { neg += 1 }
            i += 1;
        }
        while j < ys.len() && ys[j].0 == current {
            if ys[j].1 { pos += 1 } else { neg += 1 }
            j += 1;
        }
        twice_correct += 2 * pos as u128 * neg_below as u128 + pos as u128 * neg as u128;
        neg_below += neg;
        n_pos += pos;
        n_neg += neg;
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(LossError::AucUndefined);
    }
    Ok(twice_correct as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}
