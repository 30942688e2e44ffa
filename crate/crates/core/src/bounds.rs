//! Generalization bounds for a fitted tree of predictors, with a Monte-Carlo
//! estimate of the empirical Rademacher complexity of each base learner.
//!
//! The estimate replaces the supremum over the hypothesis class by the
//! predictor the learner produces when trained against pseudo-targets aligned
//! with the random signs. It is a heuristic estimate, not a certificate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::learners::{self, AlgorithmSpec, LearnerError, Sample};
use crate::losses::LossKind;
use crate::model::OverallPredictor;
use crate::seeding;

pub const BANNER: &str = "Rademacher terms are Monte-Carlo estimates, not certificates";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("delta must lie in (0, 1), got {0}")]
    Delta(f64),
    #[error("sample count must be at least 1")]
    EmptySample,
    #[error("need at least one Monte-Carlo draw")]
    NoDraws,
    #[error("no terminal has training rows")]
    NoTerminals,
    #[error("algorithm '{0}' is not part of the model")]
    UnknownAlgorithm(String),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    /// Mean over draws, clamped at zero.
    pub value: f64,
    pub std_err: f64,
    pub per_draw: Vec<f64>,
}

/// Random signs of draw `draw`, each ±1 with probability one half.
pub fn sign_vector(seed: u64, draw: usize, m: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(&[seed, draw as u64]));
    (0..m)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect()
}

/// Loss used inside the bounds: 1 − AUC has no per-sample form, so its 0-1
/// surrogate stands in.
pub fn bound_loss(kind: LossKind) -> LossKind {
    match kind {
        LossKind::OneMinusAuc => LossKind::ErrorRate,
        k => k,
    }
}

/// Monte-Carlo estimate of `(1/m) E_σ sup_h Σ σ_i ℓ(h(x_i), y_i)`.
///
/// For each draw the learner is trained on targets equal to `y_i` where
/// `σ_i = −1` and to the reflected label `y_min + y_max − y_i` where
/// `σ_i = +1`, which pushes the loss up exactly on the positively signed rows.
pub fn rademacher_estimate(
    spec: &AlgorithmSpec,
    sample: &Sample<'_>,
    loss: LossKind,
    n_draws: usize,
    seed: u64,
) -> Result<RademacherEstimate, BoundError> {
    if n_draws == 0 {
        return Err(BoundError::NoDraws);
    }
    let m = sample.len();
    if m == 0 {
        return Err(BoundError::EmptySample);
    }
    let kind = bound_loss(loss);
    let y = &sample.targets;
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let per_draw = (0..n_draws)
        .into_par_iter()
        .map(|j| {
            let sigma = sign_vector(seed, j, m);
            let targets: Vec<f64> = y
                .iter()
                .zip(&sigma)
                .map(|(&yi, &s)| if s > 0.0 { lo + hi - yi } else { yi })
                .collect();
            let pseudo = Sample::with_targets(sample.data, sample.rows, targets);
            let h = learners::train(spec, &pseudo, 1, seeding::derive(&[seed, j as u64, 1]))?;
            let total: f64 = (0..m)
                .map(|i| sigma[i] * kind.pointwise(h.score_row(sample.x(i)), y[i]))
                .sum();
            Ok(total / m as f64)
        })
        .collect::<Result<Vec<f64>, LearnerError>>()?;
    let n = per_draw.len() as f64;
    let mean = per_draw.iter().sum::<f64>() / n;
    let std_err = if per_draw.len() > 1 {
        let var = per_draw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(RademacherEstimate {
        value: mean.max(0.0),
        std_err,
        per_draw,
    })
}

fn check_delta(delta: f64) -> Result<(), BoundError> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(BoundError::Delta(delta))
    }
}

/// `L + 2R + 4·sqrt(2·ln(4/δ)/m)`.
pub fn theorem1_bound(empirical_loss: f64, rademacher: f64, m: usize, delta: f64) -> Result<f64, BoundError> {
    check_delta(delta)?;
    if m == 0 {
        return Err(BoundError::EmptySample);
    }
    Ok(empirical_loss + 2.0 * rademacher + confidence_term(m, delta, 1))
}

/// `4·sqrt(2·ln(4·T/δ)/m)`.
pub fn confidence_term(m: usize, delta: f64, n_terminals: usize) -> f64 {
    4.0 * (2.0 * (4.0 * n_terminals as f64 / delta).ln() / m as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalTerms {
    pub n_train: usize,
    pub empirical_loss: f64,
    pub max_rademacher: f64,
}

/// Size-weighted average of the per-terminal bounds with δ shared across the
/// `n_terminals` terminals. Entries without training rows carry no weight
/// but still count toward `n_terminals`.
pub fn corollary_bound(terms: &[TerminalTerms], n_terminals: usize, delta: f64) -> Result<f64, BoundError> {
    check_delta(delta)?;
    let n: usize = terms.iter().map(|t| t.n_train).sum();
    if n == 0 {
        return Err(BoundError::NoTerminals);
    }
    let t = n_terminals.max(terms.len());
    let total: f64 = terms
        .iter()
        .filter(|x| x.n_train > 0)
        .map(|x| {
            x.n_train as f64
                * (x.empirical_loss + 2.0 * x.max_rademacher + confidence_term(x.n_train, delta, t))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalBound {
    pub terminal: usize,
    pub n_train: usize,
    pub empirical_loss: f64,
    pub max_path_rademacher: f64,
    pub confidence: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub delta: f64,
    pub loss: LossKind,
    /// Set when the configured loss has no per-sample form and the 0-1
    /// surrogate was bounded instead.
    pub surrogate: bool,
    pub n_draws: usize,
    pub banner: String,
    pub terminals: Vec<TerminalBound>,
    /// Terminals without training rows, left out of the weighted sum.
    pub empty_terminals: Vec<usize>,
    pub aggregate: f64,
}

/// Bound report for a fitted model; `data` is normalized, `s` the training
/// rows the tree was grown on.
pub fn bound_report(
    h: &OverallPredictor,
    data: &Dataset,
    s: &[usize],
    delta: f64,
    n_draws: usize,
    seed: u64,
) -> Result<BoundReport, BoundError> {
    check_delta(delta)?;
    let kind = bound_loss(h.loss.kind);
    let tree = &h.tree;
    let mut routed: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
    for &r in s {
        routed[tree.terminal_of(data.row(r))].push(r);
    }
    let mut terminals = Vec::new();
    let mut empty = Vec::new();
    for &t in &tree.terminals {
        let rows = &routed[t];
        if rows.is_empty() {
            empty.push(t);
            continue;
        }
        let sample = Sample::new(data, rows);
        let empirical_loss = rows
            .iter()
            .map(|&r| kind.pointwise(h.predict_normalized(data.row(r)), data.label(r)))
            .sum::<f64>()
            / rows.len() as f64;
        let mut seen: Vec<&str> = Vec::new();
        let mut max_r: f64 = 0.0;
        for &n in &tree.path_to(t) {
            let id = tree.nodes[n].predictor.algorithm.as_str();
            if seen.contains(&id) {
                continue;
            }
            seen.push(id);
            let spec = h
                .algorithms
                .iter()
                .find(|a| a.id == id)
                .ok_or_else(|| BoundError::UnknownAlgorithm(id.to_string()))?;
            let est = rademacher_estimate(
                spec,
                &sample,
                kind,
                n_draws,
                seeding::derive(&[seed, t as u64, seeding::hash_str(id)]),
            )?;
            max_r = max_r.max(est.value);
        }
        let confidence = confidence_term(rows.len(), delta, 1);
        terminals.push(TerminalBound {
            terminal: t,
            n_train: rows.len(),
            empirical_loss,
            max_path_rademacher: max_r,
            confidence,
            bound: empirical_loss + 2.0 * max_r + confidence,
        });
    }
    let terms: Vec<TerminalTerms> = terminals
        .iter()
        .map(|t| TerminalTerms {
            n_train: t.n_train,
            empirical_loss: t.empirical_loss,
            max_rademacher: t.max_path_rademacher,
        })
        .collect();
    let aggregate = corollary_bound(&terms, tree.terminals.len(), delta)?;
    Ok(BoundReport {
        delta,
        loss: h.loss.kind,
        surrogate: kind != h.loss.kind,
        n_draws,
        banner: BANNER.to_string(),
        terminals,
        empty_terminals: empty,
        aggregate,
    })
}
