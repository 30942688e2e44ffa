//! Experiment protocol: repeated runs with hold-out or k-fold evaluation,
//! baselines trained on S, gains and two-sample t-tests. Also the single-run
//! training pipeline and DOT export of a fitted tree.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::bounds::{self, BoundError, BoundReport};
use crate::config::{self, ConfigError, ExperimentConfig, TrainConfig};
use crate::dataset::{self, normalize, DataError, Dataset, Partition};
use crate::growth::{self, GrowConfig, GrowError, GrowthReport};
use crate::learners::{self, LearnerError, Sample};
use crate::losses::{self, LossError};
use crate::model::OverallPredictor;
use crate::seeding;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("tree growth: {0}")]
    Grow(#[from] GrowError),
    #[error("baseline: {0}")]
    Learner(#[from] LearnerError),
    #[error("evaluation: {0}")]
    Loss(#[from] LossError),
    #[error("bounds: {0}")]
    Bounds(#[from] BoundError),
    #[error("gain undefined for non-positive baseline loss {0}")]
    NonPositiveBaseline(f64),
    #[error("t-test needs at least two values per sample (got {0} and {1})")]
    SampleTooSmall(usize, usize),
    #[error("node {0} is not a terminal")]
    NotTerminal(usize),
    #[error("{n} rows cannot be cut into {folds} folds")]
    TooFewRows { n: usize, folds: usize },
}

/// `(baseline − tops) / baseline`.
pub fn gain(loss_tops: f64, loss_baseline: f64) -> Result<f64, HarnessError> {
    if !(loss_baseline > 0.0) {
        return Err(HarnessError::NonPositiveBaseline(loss_baseline));
    }
    Ok((loss_baseline - loss_tops) / loss_baseline)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than 2 values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Two-sided two-sample Student t-test with pooled variance. With zero
/// pooled variance, equal means give 1 and unequal means 0.
pub fn t_test(a: &[f64], b: &[f64]) -> Result<f64, HarnessError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(HarnessError::SampleTooSmall(a.len(), b.len()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let ss = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    let df = na + nb - 2.0;
    let pooled = (ss(a, ma) + ss(b, mb)) / df;
    if pooled == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df ≥ 2");
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

/// Output of one training run.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: OverallPredictor,
    pub growth: GrowthReport,
    pub partition: Partition,
    /// The dataset normalized with the model's parameters.
    pub normalized: Dataset,
    pub bounds: Option<BoundReport>,
}

/// Partitions `pool` rows, normalizes on S, grows the tree and fits weights.
pub fn fit_on_rows(data: &Dataset, pool: &[usize], cfg: &TrainConfig, seed: u64) -> Result<Fitted, HarnessError> {
    cfg.validate()?;
    config::check_loss_labels(cfg.loss, data.label_kind())?;
    let algorithms = cfg.instantiation.resolve()?;
    let partition = dataset::split_rows(pool, cfg.ratios, seed)?;
    let (normalized, params) = normalize(data, &partition.s_idx);
    let grow_cfg = GrowConfig {
        limits: cfg.limits,
        seed,
        ..GrowConfig::default()
    };
    let grown = growth::grow(
        &normalized,
        &partition.s_idx,
        &partition.v1_idx,
        &algorithms,
        cfg.loss.into(),
        grow_cfg,
    )?;
    let model = OverallPredictor::build(
        grown.tree,
        &normalized,
        &partition.v2_idx,
        cfg.loss.into(),
        algorithms,
        params,
        &cfg.weights,
        seed,
    );
    let bounds = match cfg.bounds {
        Some(b) => Some(bounds::bound_report(
            &model,
            &normalized,
            &partition.s_idx,
            b.delta,
            b.n_draws,
            seed,
        )?),
        None => None,
    };
    Ok(Fitted {
        model,
        growth: grown.report,
        partition,
        normalized,
        bounds,
    })
}

/// Training pipeline on every row of `data`, seeded by `cfg.seed`.
pub fn fit(data: &Dataset, cfg: &TrainConfig) -> Result<Fitted, HarnessError> {
    fit_on_rows(data, &data.all_rows(), cfg, cfg.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub id: usize,
    pub depth: usize,
    pub learner: String,
    pub trained_on: usize,
    /// Parent links from the node up to its training node.
    pub hops_up: usize,
    pub split: Option<(String, f64)>,
    pub delta_v: f64,
    pub delta_t: Option<f64>,
    pub n_train: usize,
    pub n_v1: usize,
    pub candidates_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalWeights {
    pub terminal: usize,
    pub path: Vec<usize>,
    pub weights: Vec<f64>,
    pub n_v2: usize,
}

/// Report written next to a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub loss: String,
    pub learners: Vec<String>,
    pub n_rows: usize,
    pub partition_sizes: [usize; 3],
    pub n_nodes: usize,
    pub n_terminals: usize,
    pub n_splits: usize,
    pub growth: GrowthReport,
    pub nodes: Vec<NodeSummary>,
    pub weights: Vec<TerminalWeights>,
    pub bounds: Option<BoundReport>,
}

pub fn node_summaries(h: &OverallPredictor) -> Vec<NodeSummary> {
    let tree = &h.tree;
    tree.nodes
        .iter()
        .map(|n| {
            let trained_on = n.predictor.trained_on.unwrap_or(n.id);
            NodeSummary {
                id: n.id,
                depth: n.depth,
                learner: n.predictor.algorithm.clone(),
                trained_on,
                hops_up: tree.hops(n.id, trained_on).unwrap_or(0),
                split: n
                    .split
                    .map(|s| (feature_name(h, s.feature), s.threshold)),
                delta_v: n.delta_v,
                delta_t: h.weights.get(n.id).and_then(|w| w.delta_t),
                n_train: n.n_train,
                n_v1: n.n_v1,
                candidates_evaluated: n.candidates_evaluated,
            }
        })
        .collect()
}

fn feature_name(h: &OverallPredictor, f: usize) -> String {
    h.metadata
        .feature_names
        .get(f)
        .cloned()
        .unwrap_or_else(|| format!("x{f}"))
}

impl TrainingReport {
    pub fn new(fitted: &Fitted) -> Self {
        let h = &fitted.model;
        let p = &fitted.partition;
        TrainingReport {
            loss: h.loss.kind.name().to_string(),
            learners: h.algorithms.iter().map(|a| a.id.clone()).collect(),
            n_rows: p.s_idx.len() + p.v1_idx.len() + p.v2_idx.len(),
            partition_sizes: [p.s_idx.len(), p.v1_idx.len(), p.v2_idx.len()],
            n_nodes: h.tree.nodes.len(),
            n_terminals: h.tree.terminals.len(),
            n_splits: fitted.growth.trajectory.len(),
            growth: fitted.growth.clone(),
            nodes: node_summaries(h),
            weights: h
                .weights
                .paths
                .iter()
                .map(|w| TerminalWeights {
                    terminal: w.terminal,
                    path: w.path.clone(),
                    weights: w.weights.clone(),
                    n_v2: w.n_v2,
                })
                .collect(),
            bounds: fitted.bounds.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Plain-text node listing: learner, training-node marker, Δ_v, Δ_t.
pub fn text_summary(h: &OverallPredictor) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} nodes, {} terminals, loss {}",
        h.tree.nodes.len(),
        h.tree.terminals.len(),
        h.loss.kind
    );
    for n in node_summaries(h) {
        let indent = "  ".repeat(n.depth);
        let marker = "↑".repeat(n.hops_up);
        let _ = write!(out, "{indent}#{} {}{}", n.id, n.learner, marker);
        if marker.is_empty() {
            let _ = write!(out, " (own rows)");
        } else {
            let _ = write!(out, " (trained on #{})", n.trained_on);
        }
        match &n.split {
            Some((f, t)) => {
                let _ = write!(out, " split {f} < {t:.6} Δv={:.6}", n.delta_v);
            }
            None => match n.delta_t {
                Some(d) => {
                    let _ = write!(out, " terminal Δt={d:.6}");
                }
                None => {
                    let _ = write!(out, " terminal Δt=n/a");
                }
            },
        }
        out.push('\n');
    }
    out
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz digraph of the tree. Non-terminals show the split, learner,
/// one ↑ per hop to the training node, and Δ_v; terminals show Δ_t. When
/// `highlight` names a terminal its path is drawn bold with the weights.
pub fn export_dot(h: &OverallPredictor, highlight: Option<usize>) -> Result<String, HarnessError> {
    let tree = &h.tree;
    let path_weights = match highlight {
        Some(t) if tree.is_terminal(t) => {
            let pw = h.weights.get(t).ok_or(HarnessError::NotTerminal(t))?;
            Some(pw)
        }
        Some(t) => return Err(HarnessError::NotTerminal(t)),
        None => None,
    };
    let weight_of = |node: usize| -> Option<f64> {
        let pw = path_weights?;
        pw.path.iter().position(|&n| n == node).map(|k| pw.weights[k])
    };
    let mut out = String::from("digraph tops {\n  node [shape=box, fontname=\"Helvetica\"];\n");
    for n in node_summaries(h) {
        let mut label = format!("#{} {}{}", n.id, dot_escape(&n.learner), "↑".repeat(n.hops_up));
        match &n.split {
            Some((f, t)) => {
                let _ = write!(label, "\\n{} < {t:.4}\\nΔv = {:.4}", dot_escape(f), n.delta_v);
            }
            None => match n.delta_t {
                Some(d) => {
                    let _ = write!(label, "\\nΔt = {d:.4}");
                }
                None => label.push_str("\\nΔt = n/a"),
            },
        }
        if let Some(w) = weight_of(n.id) {
            let _ = write!(label, "\\nw = {w:.4}");
        }
        let style = if weight_of(n.id).is_some() {
            ", penwidth=2, color=\"red\""
        } else {
            ""
        };
        let _ = writeln!(out, "  n{} [label=\"{}\"{}];", n.id, label, style);
    }
    for n in &tree.nodes {
        if let (Some(s), Some(children)) = (n.split, n.children) {
            for (k, c) in children.into_iter().enumerate() {
                let op = if k == 0 { "<" } else { "≥" };
                let mut label = format!("{op} {:.4}", s.threshold);
                let mut style = String::new();
                if let (Some(w), Some(_)) = (weight_of(c), weight_of(n.id)) {
                    let _ = write!(label, "\\nw = {w:.4}");
                    style.push_str(", penwidth=2, color=\"red\"");
                }
                let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"{}];", n.id, c, label, style);
            }
        }
    }
    out.push_str("}\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub run: usize,
    pub fold: usize,
    pub seed: u64,
    pub n_pool: usize,
    pub n_test: usize,
    pub tops_loss: f64,
    /// One entry per configured baseline, in order.
    pub baseline_losses: Vec<f64>,
    pub n_nodes: usize,
    pub n_terminals: usize,
    pub candidates_total: usize,
    /// Largest per-node ratio of evaluated candidates to `|S(C)|·D`.
    pub max_candidate_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    pub losses: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    /// Gain of the mean ToPs loss over the mean baseline loss; absent when the
    /// baseline loss is not positive.
    pub gain: Option<f64>,
    /// Absent with fewer than two evaluations.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub loss: String,
    pub instantiation: String,
    pub n_runs: usize,
    pub cv_folds: usize,
    pub evaluations: Vec<Evaluation>,
    pub methods: Vec<MethodSummary>,
    pub comparisons: Vec<Comparison>,
}

/// Wall-clock timings, kept apart from the report so that the report stays
/// byte-identical across repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Seconds per evaluation in (run, fold) order.
    pub evaluation_secs: Vec<f64>,
    pub total_secs: f64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "loss {} | {} | {} evaluations ({} runs, {} folds)",
            self.loss,
            self.instantiation,
            self.evaluations.len(),
            self.n_runs,
            self.cv_folds
        );
        let _ = writeln!(out, "{:<24} {:>12} {:>12} {:>9} {:>10}", "method", "mean", "std", "gain", "p-value");
        for (k, m) in self.methods.iter().enumerate() {
            let (g, p) = if k == 0 {
                ("-".to_string(), "-".to_string())
            } else {
                let c = &self.comparisons[k - 1];
                (
                    c.gain.map_or("n/a".into(), |g| format!("{:.1}%", 100.0 * g)),
                    c.p_value.map_or("n/a".into(), |p| format!("{p:.4}")),
                )
            };
            let _ = writeln!(out, "{:<24} {:>12.6} {:>12.6} {:>9} {:>10}", m.name, m.mean, m.std, g, p);
        }
        out
    }
}

struct Job {
    run: usize,
    fold: usize,
    seed: u64,
    pool: Vec<usize>,
    test: Vec<usize>,
}

fn jobs(cfg: &ExperimentConfig, data: &Dataset, test_rows: Option<&[usize]>) -> Result<Vec<Job>, HarnessError> {
    let mut out = Vec::new();
    let all = data.all_rows();
    for (run, &seed) in cfg.run_seeds().iter().enumerate() {
        if let Some(test) = test_rows {
            let pool: Vec<usize> = all.iter().copied().filter(|r| !test.contains(r)).collect();
            out.push(Job {
                run,
                fold: 0,
                seed: seeding::derive(&[seed, 0]),
                pool,
                test: test.to_vec(),
            });
            continue;
        }
        let mut shuffled = all.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = shuffled.len();
        if cfg.cv_folds >= 2 {
            if n < cfg.cv_folds {
                return Err(HarnessError::TooFewRows { n, folds: cfg.cv_folds });
            }
            for fold in 0..cfg.cv_folds {
                let (lo, hi) = (fold * n / cfg.cv_folds, (fold + 1) * n / cfg.cv_folds);
                let test = shuffled[lo..hi].to_vec();
                let pool = shuffled[..lo].iter().chain(&shuffled[hi..]).copied().collect();
                out.push(Job {
                    run,
                    fold,
                    seed: seeding::derive(&[seed, fold as u64]),
                    pool,
                    test,
                });
            }
        } else {
            let n_test = ((cfg.test_fraction * n as f64).floor() as usize).clamp(1, n - 1);
            out.push(Job {
                run,
                fold: 0,
                seed: seeding::derive(&[seed, 0]),
                test: shuffled[..n_test].to_vec(),
                pool: shuffled[n_test..].to_vec(),
            });
        }
    }
    Ok(out)
}

fn evaluate_job(cfg: &ExperimentConfig, data: &Dataset, job: &Job) -> Result<(Evaluation, f64), HarnessError> {
    let start = Instant::now();
    let fitted = fit_on_rows(data, &job.pool, &cfg.train, job.seed)?;
    let norm = &fitted.normalized;
    let kind = cfg.train.loss;
    let labels = norm.labels_of(&job.test);
    let scores: Vec<f64> = job
        .test
        .iter()
        .map(|&r| fitted.model.predict_normalized(norm.row(r)))
        .collect();
    let tops_loss = losses::loss_of(kind, &scores, &labels)?;
    let mut baseline_losses = Vec::new();
    for b in &cfg.baselines {
        let spec = b.resolve()?;
        let sample = Sample::new(norm, &fitted.partition.s_idx);
        let p = learners::train(&spec, &sample, 1, seeding::derive(&[job.seed, seeding::hash_str(&spec.id)]))?;
        baseline_losses.push(losses::loss_of(kind, &p.score_rows(norm, &job.test), &labels)?);
    }
    let d = data.n_features();
    let tree = &fitted.model.tree;
    let max_candidate_ratio = tree
        .nodes
        .iter()
        .filter(|n| n.n_train > 0)
        .map(|n| n.candidates_evaluated as f64 / (n.n_train * d) as f64)
        .fold(0.0, f64::max);
    Ok((
        Evaluation {
            run: job.run,
            fold: job.fold,
            seed: job.seed,
            n_pool: job.pool.len(),
            n_test: job.test.len(),
            tops_loss,
            baseline_losses,
            n_nodes: tree.nodes.len(),
            n_terminals: tree.terminals.len(),
            candidates_total: fitted.growth.total_candidates,
            max_candidate_ratio,
        },
        start.elapsed().as_secs_f64(),
    ))
}

/// Runs the protocol on an in-memory dataset.
pub fn run_on_dataset(cfg: &ExperimentConfig, data: &Dataset) -> Result<(ExperimentReport, Timing), HarnessError> {
    let start = Instant::now();
    cfg.validate()?;
    config::check_loss_labels(cfg.train.loss, data.label_kind())?;
    let (data, test_rows) = match &cfg.temporal_split {
        Some(ts) => {
            let col = data
                .specs()
                .iter()
                .find(|s| s.name == ts.column)
                .ok_or_else(|| DataError::UnknownColumn(ts.column.clone()))?
                .index;
            let test: Vec<usize> = (0..data.n_rows())
                .filter(|&r| data.value(r, col) >= ts.threshold)
                .collect();
            (data.drop_feature(&ts.column)?, Some(test))
        }
        None => (data.clone(), None),
    };
    let jobs = jobs(cfg, &data, test_rows.as_deref())?;
    let results = jobs
        .par_iter()
        .map(|job| evaluate_job(cfg, &data, job))
        .collect::<Result<Vec<_>, _>>()?;
    let (evaluations, secs): (Vec<Evaluation>, Vec<f64>) = results.into_iter().unzip();

    let tops: Vec<f64> = evaluations.iter().map(|e| e.tops_loss).collect();
    let mut methods = vec![MethodSummary {
        name: format!("ToPs ({})", cfg.train.instantiation.label()),
        mean: mean(&tops),
        std: std_dev(&tops),
        losses: tops.clone(),
    }];
    let mut comparisons = Vec::new();
    for (k, b) in cfg.baselines.iter().enumerate() {
        let losses: Vec<f64> = evaluations.iter().map(|e| e.baseline_losses[k]).collect();
        let name = b.resolve()?.id;
        comparisons.push(Comparison {
            baseline: name.clone(),
            gain: gain(mean(&tops), mean(&losses)).ok(),
            p_value: t_test(&tops, &losses).ok(),
        });
        methods.push(MethodSummary {
            name,
            mean: mean(&losses),
            std: std_dev(&losses),
            losses,
        });
    }
    let report = ExperimentReport {
        loss: cfg.train.loss.name().to_string(),
        instantiation: cfg.train.instantiation.label(),
        n_runs: cfg.n_runs,
        cv_folds: cfg.cv_folds,
        evaluations,
        methods,
        comparisons,
    };
    let timing = Timing {
        evaluation_secs: secs,
        total_secs: start.elapsed().as_secs_f64(),
    };
    Ok((report, timing))
}

/// Loads the configured dataset and runs the protocol.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Timing), HarnessError> {
    let data = cfg.dataset.schema.load_csv(&cfg.dataset.path)?;
    run_on_dataset(cfg, &data)
}
