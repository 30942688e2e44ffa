//! Greedy growth of the locally optimal tree of predictors.
//!
//! Each node carries a predictor trained on the node itself or on one of its
//! ancestors. A terminal is split on `(feature, τ)` only when some pair of
//! child predictors lowers the loss on the node's first-validation rows.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Cell, Dataset, FeatureKind, FeatureSpec};
use crate::learners::{self, AlgorithmSpec, Predictor, Sample};
use crate::losses::{self, LossError, LossKind, LossSpec, RankedScores};
use crate::seeding;

pub const IMPROVEMENT_TOL: f64 = 1e-9;

fn default_max_depth() -> usize {
    20
}
fn default_min_leaf_v1() -> usize {
    5
}
fn default_min_train() -> usize {
    learners::DEFAULT_MIN_TRAIN_SAMPLES
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    /// Minimum first-validation rows in each child of a split.
    #[serde(default = "default_min_leaf_v1")]
    pub min_leaf_v1: usize,
    /// Minimum training rows for a learner to be fitted on a node.
    #[serde(default = "default_min_train")]
    pub min_train_samples: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_depth: default_max_depth(),
            min_leaf_v1: default_min_leaf_v1(),
            min_train_samples: default_min_train(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowConfig {
    pub limits: Limits,
    pub improvement_tol: f64,
    pub seed: u64,
}

impl Default for GrowConfig {
    fn default() -> Self {
        Self {
            limits: Limits::default(),
            improvement_tol: IMPROVEMENT_TOL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrowError {
    #[error("training set S is empty")]
    EmptyTrain,
    #[error("validation set V1 is empty")]
    EmptyValidation,
    #[error("no algorithms configured")]
    NoAlgorithms,
    #[error("no algorithm could be trained on the root: {0}")]
    RootUntrainable(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub cell: Cell,
    pub parent: Option<usize>,
    pub depth: usize,
    pub predictor: Predictor,
    pub split: Option<Split>,
    pub children: Option<[usize; 2]>,
    /// V¹ loss improvement of this node's split; 0 at terminals.
    pub delta_v: f64,
    /// `L(h_C, V¹(C))` at the time the node was created.
    pub v1_loss: f64,
    /// Node-level comparisons used the error rate because V¹(C) had one class.
    pub loss_fallback: bool,
    pub candidates_evaluated: usize,
    pub n_train: usize,
    pub n_v1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeOfPredictors {
    pub nodes: Vec<NodeRecord>,
    pub root: usize,
    pub terminals: Vec<usize>,
}

impl TreeOfPredictors {
    pub fn node(&self, id: usize) -> &NodeRecord {
        &self.nodes[id]
    }

    pub fn is_terminal(&self, id: usize) -> bool {
        self.nodes.get(id).is_some_and(|n| n.children.is_none())
    }

    /// Terminal reached by routing `x` (`x_i < τ` left, otherwise right).
    pub fn terminal_of(&self, x: &[f64]) -> usize {
        let mut at = self.root;
        while let (Some(s), Some([l, r])) = (self.nodes[at].split, self.nodes[at].children) {
            at = if x[s.feature] < s.threshold { l } else { r };
        }
        at
    }

    /// Node ids from the root down to `node`.
    pub fn path_to(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        let mut at = node;
        while let Some(p) = self.nodes[at].parent {
            path.push(p);
            at = p;
        }
        path.reverse();
        path
    }

    /// Number of parent links between `node` and its ancestor `ancestor`.
    pub fn hops(&self, node: usize, ancestor: usize) -> Option<usize> {
        let mut at = node;
        let mut k = 0;
        loop {
            if at == ancestor {
                return Some(k);
            }
            at = self.nodes[at].parent?;
            k += 1;
        }
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.nodes.is_empty() || self.root >= self.nodes.len() {
            return Err("missing root".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(format!("node at index {i} has id {}", n.id));
            }
            let Some(t) = n.predictor.trained_on else {
                return Err(format!("node {i} predictor has no training node"));
            };
            if self.hops(i, t).is_none() {
                return Err(format!("node {i} trained on non-ancestor {t}"));
            }
            if !n.cell.is_subset_of(&self.nodes[t].cell) {
                return Err(format!("node {i} cell not inside its training node's cell"));
            }
            match (n.split, n.children) {
                (None, None) => {
                    if n.delta_v != 0.0 {
                        return Err(format!("terminal {i} has delta_v {}", n.delta_v));
                    }
                }
                (Some(s), Some([l, r])) => {
                    let (cl, cr) = n.cell.split(s.feature, s.threshold);
                    if self.nodes[l].cell != cl || self.nodes[r].cell != cr {
                        return Err(format!("children of {i} do not partition its cell"));
                    }
                    if self.nodes[l].parent != Some(i) || self.nodes[r].parent != Some(i) {
                        return Err(format!("children of {i} have wrong parent"));
                    }
                    if !(n.delta_v > 0.0) {
                        return Err(format!("non-terminal {i} has delta_v {}", n.delta_v));
                    }
                }
                _ => return Err(format!("node {i} has a split without children")),
            }
        }
        let mut expected: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].children.is_none())
            .collect();
        expected.sort_unstable();
        let mut got = self.terminals.clone();
        got.sort_unstable();
        if expected != got {
            return Err("terminal list does not match childless nodes".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEvent {
    pub node: usize,
    pub feature: usize,
    pub threshold: f64,
    pub node_loss: f64,
    pub joint_loss: f64,
    /// Loss of the union of terminal predictors on all of V¹.
    pub global_before: f64,
    pub global_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub root_v1_loss: f64,
    pub final_v1_loss: f64,
    pub trajectory: Vec<SplitEvent>,
    /// Nodes whose comparisons fell back from 1 − AUC to the error rate.
    pub fallback_nodes: Vec<usize>,
    pub total_candidates: usize,
}

#[derive(Debug, Clone)]
pub struct Grown {
    pub tree: TreeOfPredictors,
    pub report: GrowthReport,
}

/// Split thresholds for one feature at one node: 0.5 for binary features,
/// otherwise the 10th..90th percentiles (linear interpolation between order
/// statistics). Thresholds that leave all values on one side, or that
/// partition the values exactly like a smaller threshold, are dropped.
pub fn candidate_thresholds(feature: &FeatureSpec, values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let raw: Vec<f64> = match feature.kind {
        FeatureKind::Binary => vec![0.5],
        FeatureKind::Continuous => (1..=9)
            .map(|k| percentile(&sorted, k as f64 / 10.0))
            .collect(),
    };
    // keep the first threshold of each distinct partition of the values
    let mut out: Vec<f64> = Vec::with_capacity(raw.len());
    let mut last_below = 0;
    for t in raw {
        let below = sorted.partition_point(|&v| v < t);
        if t > min && t <= max && below != last_below {
            out.push(t);
            last_below = below;
        }
    }
    out
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

fn cell_key(cell: &Cell) -> u64 {
    let mut h = 0xC311_u64;
    for &(lo, hi) in &cell.bounds {
        h = seeding::derive(&[h, lo.to_bits(), hi.to_bits()]);
    }
    h
}

/// One child-predictor option of a candidate split.
#[derive(Debug, Clone)]
pub struct ChildChoice {
    pub algorithm: usize,
    /// 0 = trained on the child, 1 = on the split node, k = its (k−1)-th ancestor.
    pub hops: usize,
    pub predictor: Arc<Predictor>,
}

#[derive(Debug, Clone)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub joint_loss: f64,
    pub left: ChildChoice,
    pub right: ChildChoice,
}

/// A split choice with the per-side V¹ scores it was judged on.
type Evaluated = (SplitChoice, Vec<f64>, Vec<f64>);

/// Predictors of the split node and its ancestors, pre-scored on V¹(C).
struct NodeContext {
    node: usize,
    kind: LossKind,
    fallback: bool,
    /// `chain[k]` is the node `k + 1` hops above a child.
    chain: Vec<usize>,
    v1_rows: Vec<usize>,
    labels: Vec<f64>,
    inherited: Vec<Inherited>,
    base_loss: f64,
}

struct Inherited {
    algorithm: usize,
    hops: usize,
    predictor: Arc<Predictor>,
    scores: Vec<f64>,
}

enum SideEval {
    Additive { sum: f64 },
    Ranked(RankedScores),
}

struct SideOption {
    choice: ChildChoice,
    scores: Vec<f64>,
    eval: SideEval,
}

/// Tree growth driver. Holds the growing tree, the per-node row sets and the
/// cache of predictors trained per (training node, algorithm).
pub struct Grower<'a> {
    data: &'a Dataset,
    algorithms: &'a [AlgorithmSpec],
    kind: LossKind,
    cfg: GrowConfig,
    nodes: Vec<NodeRecord>,
    node_s: Vec<Vec<usize>>,
    /// Positions into `v1_rows`.
    node_v1: Vec<Vec<usize>>,
    v1_rows: Vec<usize>,
    v1_labels: Vec<f64>,
    cache: Vec<Vec<Option<Arc<Predictor>>>>,
    terminal_scores: Vec<f64>,
    trajectory: Vec<SplitEvent>,
    root_v1_loss: f64,
}

impl<'a> Grower<'a> {
    /// Fits the root: every algorithm trained on S, the one with the lowest
    /// V¹ loss kept (first listed on ties).
    pub fn new(
        data: &'a Dataset,
        s: &[usize],
        v1: &[usize],
        algorithms: &'a [AlgorithmSpec],
        loss: LossSpec,
        cfg: GrowConfig,
    ) -> Result<Self, GrowError> {
        if algorithms.is_empty() {
            return Err(GrowError::NoAlgorithms);
        }
        if s.is_empty() {
            return Err(GrowError::EmptyTrain);
        }
        if v1.is_empty() {
            return Err(GrowError::EmptyValidation);
        }
        let cell = Cell::root(data.n_features());
        let mut g = Grower {
            data,
            algorithms,
            kind: loss.kind,
            cfg,
            nodes: Vec::new(),
            node_s: vec![s.to_vec()],
            node_v1: vec![(0..v1.len()).collect()],
            v1_rows: v1.to_vec(),
            v1_labels: data.labels_of(v1),
            cache: Vec::new(),
            terminal_scores: Vec::new(),
            trajectory: Vec::new(),
            root_v1_loss: 0.0,
        };
        let (trained, errors) = g.train_all(s, &cell, 0);
        if trained.iter().all(Option::is_none) {
            return Err(GrowError::RootUntrainable(errors.join("; ")));
        }
        let kind = losses::effective_kind(loss.kind, &g.v1_labels);
        let mut best: Option<(f64, &Arc<Predictor>, Vec<f64>)> = None;
        for p in trained.iter().flatten() {
            let scores = p.score_rows(data, v1);
            let l = losses::loss_of(kind, &scores, &g.v1_labels)?;
            if best.as_ref().is_none_or(|b| l < b.0) {
                best = Some((l, p, scores));
            }
        }
        let (root_loss, pred, scores) = best.expect("at least one trained predictor");
        g.nodes.push(NodeRecord {
            id: 0,
            cell,
            parent: None,
            depth: 0,
            predictor: (**pred).clone(),
            split: None,
            children: None,
            delta_v: 0.0,
            v1_loss: root_loss,
            loss_fallback: kind != loss.kind,
            candidates_evaluated: 0,
            n_train: s.len(),
            n_v1: v1.len(),
        });
        g.cache.push(trained);
        g.terminal_scores = scores;
        g.root_v1_loss = g.global_loss()?;
        Ok(g)
    }

    pub fn tree(&self) -> TreeOfPredictors {
        TreeOfPredictors {
            nodes: self.nodes.clone(),
            root: 0,
            terminals: self.terminals(),
        }
    }

    fn terminals(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].children.is_none())
            .collect()
    }

    fn train_seed(&self, cell: &Cell, algorithm: usize) -> u64 {
        seeding::derive(&[
            self.cfg.seed,
            cell_key(cell),
            seeding::hash_str(&self.algorithms[algorithm].id),
        ])
    }

    fn train_one(&self, rows: &[usize], cell: &Cell, algorithm: usize) -> Result<Predictor, String> {
        let sample = Sample::new(self.data, rows);
        learners::train(
            &self.algorithms[algorithm],
            &sample,
            self.cfg.limits.min_train_samples,
            self.train_seed(cell, algorithm),
        )
        .map_err(|e| format!("{}: {e}", self.algorithms[algorithm].id))
    }

    fn train_all(
        &self,
        rows: &[usize],
        cell: &Cell,
        node: usize,
    ) -> (Vec<Option<Arc<Predictor>>>, Vec<String>) {
        let results: Vec<Result<Predictor, String>> = (0..self.algorithms.len())
            .into_par_iter()
            .map(|a| self.train_one(rows, cell, a))
            .collect();
        let mut errors = Vec::new();
        let trained = results
            .into_iter()
            .map(|r| match r {
                Ok(mut p) => {
                    p.trained_on = Some(node);
                    Some(Arc::new(p))
                }
                Err(e) => {
                    errors.push(e);
                    None
                }
            })
            .collect();
        (trained, errors)
    }

    fn global_loss(&self) -> Result<f64, LossError> {
        Ok(losses::node_loss(self.kind, &self.terminal_scores, &self.v1_labels)?.0)
    }

    fn context(&self, node: usize) -> NodeContext {
        let rec = &self.nodes[node];
        let v1_rows: Vec<usize> = self.node_v1[node].iter().map(|&p| self.v1_rows[p]).collect();
        let labels: Vec<f64> = self.node_v1[node].iter().map(|&p| self.v1_labels[p]).collect();
        let kind = losses::effective_kind(self.kind, &labels);
        let mut chain = vec![node];
        let mut at = node;
        while let Some(p) = self.nodes[at].parent {
            chain.push(p);
            at = p;
        }
        let mut inherited = Vec::new();
        for a in 0..self.algorithms.len() {
            for (k, &c) in chain.iter().enumerate() {
                if let Some(p) = &self.cache[c][a] {
                    inherited.push(Inherited {
                        algorithm: a,
                        hops: k + 1,
                        predictor: Arc::clone(p),
                        scores: p.score_rows(self.data, &v1_rows),
                    });
                }
            }
        }
        let base_scores = rec.predictor.score_rows(self.data, &v1_rows);
        let base_loss = losses::loss_of(kind, &base_scores, &labels).unwrap_or(f64::INFINITY);
        NodeContext {
            node,
            kind,
            fallback: kind != self.kind,
            chain,
            v1_rows,
            labels,
            inherited,
            base_loss,
        }
    }

    fn side_eval(&self, kind: LossKind, scores: &[f64], labels: &[f64]) -> SideEval {
        if kind.additive() {
            SideEval::Additive {
                sum: scores
                    .iter()
                    .zip(labels)
                    .map(|(&s, &y)| kind.pointwise(s, y))
                    .sum(),
            }
        } else {
            SideEval::Ranked(RankedScores::new(scores, labels))
        }
    }

    fn side_options(
        &self,
        ctx: &NodeContext,
        cell: &Cell,
        s_rows: &[usize],
        positions: &[usize],
    ) -> Vec<SideOption> {
        let rows: Vec<usize> = positions.iter().map(|&i| ctx.v1_rows[i]).collect();
        let labels: Vec<f64> = positions.iter().map(|&i| ctx.labels[i]).collect();
        let mut out = Vec::new();
        let mut inherited = ctx.inherited.iter().peekable();
        for a in 0..self.algorithms.len() {
            if let Ok(p) = self.train_one(s_rows, cell, a) {
                let scores = p.score_rows(self.data, &rows);
                out.push(SideOption {
                    eval: self.side_eval(ctx.kind, &scores, &labels),
                    scores,
                    choice: ChildChoice {
                        algorithm: a,
                        hops: 0,
                        predictor: Arc::new(p),
                    },
                });
            }
            while let Some(inh) = inherited.next_if(|i| i.algorithm == a) {
                let scores: Vec<f64> = positions.iter().map(|&i| inh.scores[i]).collect();
                out.push(SideOption {
                    eval: self.side_eval(ctx.kind, &scores, &labels),
                    scores,
                    choice: ChildChoice {
                        algorithm: a,
                        hops: inh.hops,
                        predictor: Arc::clone(&inh.predictor),
                    },
                });
            }
        }
        out
    }

    /// Best pair of child predictors for splitting `node` at `(feature, τ)`,
    /// or `None` when a child has too few V¹ rows or no admissible predictor.
    pub fn evaluate_split(&self, node: usize, feature: usize, tau: f64) -> Option<SplitChoice> {
        let ctx = self.context(node);
        self.evaluate(&ctx, feature, tau).map(|(c, _, _)| c)
    }

    fn evaluate(&self, ctx: &NodeContext, feature: usize, tau: f64) -> Option<Evaluated> {
        let (mut left_pos, mut right_pos) = (Vec::new(), Vec::new());
        for (i, &r) in ctx.v1_rows.iter().enumerate() {
            if self.data.value(r, feature) < tau {
                left_pos.push(i);
            } else {
                right_pos.push(i);
            }
        }
        let min_v1 = self.cfg.limits.min_leaf_v1.max(1);
        if left_pos.len() < min_v1 || right_pos.len() < min_v1 {
            return None;
        }
        let (s_left, s_right): (Vec<usize>, Vec<usize>) = self.node_s[ctx.node]
            .iter()
            .partition(|&&r| self.data.value(r, feature) < tau);
        let (cell_l, cell_r) = self.nodes[ctx.node].cell.split(feature, tau);
        let left = self.side_options(ctx, &cell_l, &s_left, &left_pos);
        let right = self.side_options(ctx, &cell_r, &s_right, &right_pos);
        if left.is_empty() || right.is_empty() {
            return None;
        }
        let n = (left_pos.len() + right_pos.len()) as f64;
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, lo) in left.iter().enumerate() {
            for (j, ro) in right.iter().enumerate() {
                let joint = match (&lo.eval, &ro.eval) {
                    (SideEval::Additive { sum: a }, SideEval::Additive { sum: b }) => (a + b) / n,
                    (SideEval::Ranked(a), SideEval::Ranked(b)) => match losses::joint_auc(a, b) {
                        Ok(auc) => 1.0 - auc,
                        Err(_) => continue,
                    },
                    _ => unreachable!("both sides share the node's loss kind"),
                };
                if best.is_none_or(|b| joint < b.0) {
                    best = Some((joint, i, j));
                }
            }
        }
        let (joint_loss, i, j) = best?;
        let mut left = left;
        let mut right = right;
        let l = left.swap_remove(i);
        let r = right.swap_remove(j);
        Some((
            SplitChoice {
                feature,
                threshold: tau,
                joint_loss,
                left: l.choice,
                right: r.choice,
            },
            l.scores,
            r.scores,
        ))
    }

    fn candidates(&self, node: usize) -> Vec<(usize, f64)> {
        let rows = &self.node_s[node];
        let mut out = Vec::new();
        for spec in self.data.specs() {
            let values: Vec<f64> = rows.iter().map(|&r| self.data.value(r, spec.index)).collect();
            for t in candidate_thresholds(spec, &values) {
                out.push((spec.index, t));
            }
        }
        out
    }

    /// Attempts to split terminal `node`; returns the new child ids.
    pub fn try_split(&mut self, node: usize) -> Result<Option<[usize; 2]>, GrowError> {
        if self.nodes[node].children.is_some() || self.nodes[node].depth >= self.cfg.limits.max_depth {
            return Ok(None);
        }
        let ctx = self.context(node);
        let candidates = self.candidates(node);
        self.nodes[node].candidates_evaluated = candidates.len();
        self.nodes[node].loss_fallback = ctx.fallback;
        let evaluated: Vec<Option<Evaluated>> = candidates
            .par_iter()
            .map(|&(f, t)| self.evaluate(&ctx, f, t))
            .collect();
        // candidates are ordered by (feature, threshold): strict < keeps the first
        let mut best: Option<(SplitChoice, Vec<f64>, Vec<f64>)> = None;
        for e in evaluated.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| e.0.joint_loss < b.0.joint_loss) {
                best = Some(e);
            }
        }
        let Some((choice, left_scores, right_scores)) = best else {
            return Ok(None);
        };
        if !(choice.joint_loss < ctx.base_loss - self.cfg.improvement_tol) {
            return Ok(None);
        }
        log::debug!(
            "split node {node} on x{} < {}: {} -> {}",
            choice.feature,
            choice.threshold,
            ctx.base_loss,
            choice.joint_loss
        );

        let global_before = self.global_loss()?;
        let (cell_l, cell_r) = self.nodes[node].cell.split(choice.feature, choice.threshold);
        let (s_left, s_right): (Vec<usize>, Vec<usize>) = self.node_s[node]
            .iter()
            .partition(|&&r| self.data.value(r, choice.feature) < choice.threshold);
        let (v_left, v_right): (Vec<usize>, Vec<usize>) = self.node_v1[node]
            .iter()
            .partition(|&&p| self.data.value(self.v1_rows[p], choice.feature) < choice.threshold);
        for (&p, &s) in v_left.iter().zip(&left_scores) {
            self.terminal_scores[p] = s;
        }
        for (&p, &s) in v_right.iter().zip(&right_scores) {
            self.terminal_scores[p] = s;
        }

        let mut ids = [0; 2];
        let sides = [
            (cell_l, s_left, v_left, choice.left.clone(), left_scores),
            (cell_r, s_right, v_right, choice.right.clone(), right_scores),
        ];
        for (k, (cell, s_rows, v_pos, child, scores)) in sides.into_iter().enumerate() {
            let id = self.nodes.len();
            let labels: Vec<f64> = v_pos.iter().map(|&p| self.v1_labels[p]).collect();
            let (v1_loss, fallback) = losses::node_loss(self.kind, &scores, &labels)?;
            let mut predictor = (*child.predictor).clone();
            predictor.trained_on = Some(if child.hops == 0 {
                id
            } else {
                ctx.chain[child.hops - 1]
            });
            let (trained, _) = self.train_all(&s_rows, &cell, id);
            self.nodes.push(NodeRecord {
                id,
                cell,
                parent: Some(node),
                depth: self.nodes[node].depth + 1,
                predictor,
                split: None,
                children: None,
                delta_v: 0.0,
                v1_loss,
                loss_fallback: fallback,
                candidates_evaluated: 0,
                n_train: s_rows.len(),
                n_v1: v_pos.len(),
            });
            self.node_s.push(s_rows);
            self.node_v1.push(v_pos);
            self.cache.push(trained);
            ids[k] = id;
        }
        let rec = &mut self.nodes[node];
        rec.split = Some(Split {
            feature: choice.feature,
            threshold: choice.threshold,
        });
        rec.children = Some(ids);
        rec.delta_v = ctx.base_loss - choice.joint_loss;

        let global_after = self.global_loss()?;
        self.trajectory.push(SplitEvent {
            node,
            feature: choice.feature,
            threshold: choice.threshold,
            node_loss: ctx.base_loss,
            joint_loss: choice.joint_loss,
            global_before,
            global_after,
        });
        Ok(Some(ids))
    }

    /// Splits terminals breadth-first until none improves.
    pub fn grow(mut self) -> Result<Grown, GrowError> {
        let mut frontier = vec![0];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for node in frontier {
                if let Some(ids) = self.try_split(node)? {
                    next.extend(ids);
                }
            }
            frontier = next;
        }
        let final_v1_loss = self.global_loss()?;
        let tree = self.tree();
        let report = GrowthReport {
            root_v1_loss: self.root_v1_loss,
            final_v1_loss,
            trajectory: self.trajectory,
            fallback_nodes: tree
                .nodes
                .iter()
                .filter(|n| n.loss_fallback)
                .map(|n| n.id)
                .collect(),
            total_candidates: tree.nodes.iter().map(|n| n.candidates_evaluated).sum(),
        };
        Ok(Grown { tree, report })
    }
}

pub fn fit_root(
    data: &Dataset,
    s: &[usize],
    v1: &[usize],
    algorithms: &[AlgorithmSpec],
    loss: LossSpec,
    cfg: GrowConfig,
) -> Result<NodeRecord, GrowError> {
    let g = Grower::new(data, s, v1, algorithms, loss, cfg)?;
    Ok(g.nodes[0].clone())
}

pub fn grow(
    data: &Dataset,
    s: &[usize],
    v1: &[usize],
    algorithms: &[AlgorithmSpec],
    loss: LossSpec,
    cfg: GrowConfig,
) -> Result<Grown, GrowError> {
    Grower::new(data, s, v1, algorithms, loss, cfg)?.grow()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::LearnerKind;
    use crate::synthetic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn halves(n: usize) -> (Vec<usize>, Vec<usize>) {
        ((0..n).step_by(2).collect(), (1..n).step_by(2).collect())
    }

    fn lr() -> Vec<AlgorithmSpec> {
        vec![AlgorithmSpec::builtin("lr").unwrap()]
    }

    fn constant(id: &str) -> AlgorithmSpec {
        AlgorithmSpec::new(
            id,
            LearnerKind::Tree {
                max_depth: 0,
                min_leaf: 1,
            },
        )
    }

    fn continuous() -> FeatureSpec {
        FeatureSpec {
            index: 0,
            name: "x".into(),
            kind: FeatureKind::Continuous,
        }
    }

    #[test]
    fn binary_threshold_is_half() {
        let spec = FeatureSpec {
            kind: FeatureKind::Binary,
            ..continuous()
        };
        assert_eq!(candidate_thresholds(&spec, &[0.0, 1.0, 1.0]), vec![0.5]);
    }

    #[test]
    fn percentiles_of_even_grid() {
        let values: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let t = candidate_thresholds(&continuous(), &values);
        assert_eq!(t.len(), 9);
        for (k, &v) in t.iter().enumerate() {
            // rank (n−1)q between order statistics spaced 0.01 apart from 0.01
            let q = (k + 1) as f64 / 10.0;
            assert!((v - (0.01 + 0.99 * q)).abs() < 1e-12, "{v}");
            assert!((v - q).abs() < 0.01);
        }
    }

    #[test]
    fn two_values_give_one_threshold() {
        assert_eq!(candidate_thresholds(&continuous(), &[0.2, 0.6]).len(), 1);
    }

    #[test]
    fn constant_values_give_no_thresholds() {
        assert!(candidate_thresholds(&continuous(), &[0.3; 20]).is_empty());
        assert!(candidate_thresholds(&continuous(), &[]).is_empty());
    }

    #[test]
    fn thresholds_split_properly_and_dedupe() {
        // heavy ties: most percentiles coincide with the minimum
        let mut values = vec![0.0; 18];
        values.extend([0.5, 1.0]);
        let t = candidate_thresholds(&continuous(), &values);
        assert!(!t.is_empty());
        for w in t.windows(2) {
            assert!(w[0] < w[1]);
        }
        for &v in &t {
            assert!(values.iter().any(|&x| x < v) && values.iter().any(|&x| x >= v));
        }
    }

    #[test]
    fn root_single_learner() {
        let data = synthetic::piecewise_linear(60, 0.0, 1);
        let (s, v1) = halves(60);
        let root = fit_root(&data, &s, &v1, &lr(), LossKind::Mae.into(), GrowConfig::default()).unwrap();
        assert_eq!(root.predictor.algorithm, "lr");
        assert_eq!(root.predictor.trained_on, Some(0));
    }

    #[test]
    fn root_picks_lower_loss_then_first_listed() {
        let data = synthetic::exact_linear(60, 2);
        let (s, v1) = halves(60);
        let cfg = GrowConfig::default();
        let algs = vec![constant("const"), AlgorithmSpec::builtin("lr").unwrap()];
        let root = fit_root(&data, &s, &v1, &algs, LossKind::Mse.into(), cfg).unwrap();
        assert_eq!(root.predictor.algorithm, "lr");
        let twins = vec![constant("first"), constant("second")];
        let root = fit_root(&data, &s, &v1, &twins, LossKind::Mse.into(), cfg).unwrap();
        assert_eq!(root.predictor.algorithm, "first");
    }

    #[test]
    fn root_fails_when_nothing_trains() {
        let data = synthetic::exact_linear(10, 3);
        let (s, v1) = halves(10);
        let err = fit_root(&data, &s, &v1, &lr(), LossKind::Mse.into(), GrowConfig::default());
        assert!(matches!(err, Err(GrowError::RootUntrainable(_))));
    }

    /// Least-squares line through `(x, y)` pairs.
    fn simple_ols(points: &[(f64, f64)]) -> (f64, f64) {
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let b = sxy / sxx;
        (my - b * mx, b)
    }

    #[test]
    fn piecewise_split_beats_unsplit_and_matches_oracle() {
        let data = synthetic::piecewise_linear(400, 0.05, 4);
        let (s, v1) = halves(400);
        let algs = lr();
        let g = Grower::new(&data, &s, &v1, &algs, LossKind::Mae.into(), GrowConfig::default()).unwrap();
        let choice = g.evaluate_split(0, 0, 0.5).unwrap();
        assert_eq!((choice.left.hops, choice.right.hops), (0, 0));

        let pts = |rows: &[usize], left: bool| -> Vec<(f64, f64)> {
            rows.iter()
                .map(|&r| (data.value(r, 0), data.label(r)))
                .filter(|p| (p.0 < 0.5) == left)
                .collect()
        };
        let (a_l, b_l) = simple_ols(&pts(&s, true));
        let (a_r, b_r) = simple_ols(&pts(&s, false));
        let (a_0, b_0) = simple_ols(&pts(&s, true).into_iter().chain(pts(&s, false)).collect::<Vec<_>>());
        let mae = |f: &dyn Fn(f64) -> f64| {
            v1.iter()
                .map(|&r| (f(data.value(r, 0)) - data.label(r)).abs())
                .sum::<f64>()
                / v1.len() as f64
        };
        let joint = mae(&|x| if x < 0.5 { a_l + b_l * x } else { a_r + b_r * x });
        let unsplit = mae(&|x| a_0 + b_0 * x);
        assert!((choice.joint_loss - joint).abs() < 1e-9);
        assert!(joint < unsplit);
        assert!((g.nodes[0].v1_loss - unsplit).abs() < 1e-9);
    }

    #[test]
    fn ancestor_predictor_recovers_unsplit_loss() {
        let data = synthetic::piecewise_linear(100, 0.05, 5);
        let (s, v1) = halves(100);
        // only the root's full training set is large enough to fit on
        let cfg = GrowConfig {
            limits: Limits {
                min_train_samples: s.len(),
                ..Limits::default()
            },
            ..GrowConfig::default()
        };
        let algs = lr();
        let g = Grower::new(&data, &s, &v1, &algs, LossKind::Mae.into(), cfg).unwrap();
        let choice = g.evaluate_split(0, 0, 0.4).unwrap();
        assert_eq!((choice.left.hops, choice.right.hops), (1, 1));
        assert_eq!(choice.left.predictor.trained_on, Some(0));
        assert!((choice.joint_loss - g.nodes[0].v1_loss).abs() < 1e-12);
    }

    #[test]
    fn empty_child_validation_gives_none() {
        let data = synthetic::piecewise_linear(100, 0.0, 6);
        let (s, v1) = halves(100);
        let algs = lr();
        let g = Grower::new(&data, &s, &v1, &algs, LossKind::Mae.into(), GrowConfig::default()).unwrap();
        let top = v1.iter().map(|&r| data.value(r, 0)).fold(0.0, f64::max);
        assert!(g.evaluate_split(0, 0, top + 1e-6).is_none());
    }

    #[test]
    fn exact_global_model_stays_root_only() {
        let data = synthetic::exact_linear(200, 7);
        let (s, v1) = halves(200);
        let grown = grow(&data, &s, &v1, &lr(), LossKind::Mse.into(), GrowConfig::default()).unwrap();
        assert_eq!(grown.tree.nodes.len(), 1);
        assert!(grown.report.trajectory.is_empty());
    }

    #[test]
    fn depth_zero_equals_root_fit() {
        let data = synthetic::piecewise_linear(200, 0.05, 8);
        let (s, v1) = halves(200);
        let cfg = GrowConfig {
            limits: Limits {
                max_depth: 0,
                ..Limits::default()
            },
            ..GrowConfig::default()
        };
        let grown = grow(&data, &s, &v1, &lr(), LossKind::Mse.into(), cfg).unwrap();
        let root = fit_root(&data, &s, &v1, &lr(), LossKind::Mse.into(), cfg).unwrap();
        assert_eq!(grown.tree.nodes, vec![root]);
        assert_eq!(grown.tree.terminals, vec![0]);
    }

    #[test]
    fn piecewise_grows_near_the_kink() {
        let data = synthetic::piecewise_linear(600, 0.02, 9);
        let (s, v1) = halves(600);
        let grown = grow(&data, &s, &v1, &lr(), LossKind::Mse.into(), GrowConfig::default()).unwrap();
        grown.tree.validate().unwrap();
        let root_split = grown.tree.nodes[0].split.unwrap();
        assert!((root_split.threshold - 0.5).abs() <= 0.11, "{root_split:?}");
        assert!(grown.report.final_v1_loss < grown.report.root_v1_loss);
    }

    fn assert_partition(tree: &TreeOfPredictors, x: &[f64]) {
        let containing: Vec<usize> = tree
            .terminals
            .iter()
            .copied()
            .filter(|&t| tree.nodes[t].cell.contains(x))
            .collect();
        assert_eq!(containing, vec![tree.terminal_of(x)], "x = {x:?}");
    }

    #[test]
    fn terminals_partition_the_cube() {
        let data = synthetic::random_regression(400, 3, 10);
        let (s, v1) = halves(400);
        let grown = grow(&data, &s, &v1, &lr(), LossKind::Mse.into(), GrowConfig::default()).unwrap();
        let tree = &grown.tree;
        tree.validate().unwrap();
        assert!(tree.terminals.len() > 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..3).map(|_| rng.random()).collect();
            assert_partition(tree, &x);
        }
        for n in &tree.nodes {
            if let Some(sp) = n.split {
                for _ in 0..20 {
                    let mut x: Vec<f64> = (0..3).map(|_| rng.random()).collect();
                    x[sp.feature] = sp.threshold;
                    assert_partition(tree, &x);
                }
            }
        }
        for corner in [[0.0; 3], [1.0; 3]] {
            assert_partition(tree, &corner);
        }
    }

    #[test]
    fn containment_candidates_and_monotone_trajectory() {
        let data = synthetic::random_regression(500, 4, 12);
        let (s, v1) = halves(500);
        let grown = grow(&data, &s, &v1, &lr(), LossKind::Mse.into(), GrowConfig::default()).unwrap();
        let tree = &grown.tree;
        for n in &tree.nodes {
            let t = n.predictor.trained_on.unwrap();
            assert!(n.cell.is_subset_of(&tree.nodes[t].cell));
            assert!(n.candidates_evaluated <= n.n_train * data.n_features());
        }
        assert!(!grown.report.trajectory.is_empty());
        for e in &grown.report.trajectory {
            assert!(e.node_loss - e.joint_loss > IMPROVEMENT_TOL);
            assert!(e.global_after < e.global_before);
        }
        assert!(grown.report.final_v1_loss <= grown.report.root_v1_loss);
    }

    #[test]
    fn single_class_validation_falls_back_to_error_rate() {
        let data = synthetic::interaction(200, 0.0, true, 13);
        let s: Vec<usize> = (0..200).step_by(2).collect();
        let v1: Vec<usize> = (1..200).step_by(2).filter(|&r| data.label(r) == 1.0).collect();
        let grown = grow(&data, &s, &v1, &lr(), LossKind::OneMinusAuc.into(), GrowConfig::default()).unwrap();
        assert!(grown.tree.nodes[0].loss_fallback);
        assert!(grown.report.fallback_nodes.contains(&0));
    }

    #[test]
    fn auc_growth_with_mixed_learners() {
        let data = synthetic::interaction(300, 0.1, true, 14);
        let (s, v1) = halves(300);
        let algs = crate::learners::instantiation_set("lr,logit,stump").unwrap();
        let grown = grow(&data, &s, &v1, &algs, LossKind::OneMinusAuc.into(), GrowConfig::default()).unwrap();
        grown.tree.validate().unwrap();
        for e in &grown.report.trajectory {
            assert!(e.joint_loss < e.node_loss);
        }
    }

    fn grow_in_pool(threads: usize, seed: u64) -> String {
        let data = synthetic::random_regression(300, 3, 15);
        let (s, v1) = halves(300);
        let algs = crate::learners::instantiation_set("lr,rf,tree").unwrap();
        let cfg = GrowConfig {
            seed,
            ..GrowConfig::default()
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let grown = pool
            .install(|| grow(&data, &s, &v1, &algs, LossKind::Mae.into(), cfg))
            .unwrap();
        serde_json::to_string(&(grown.tree, grown.report)).unwrap()
    }

    #[test]
    fn growth_is_schedule_independent() {
        let one = grow_in_pool(1, 3);
        assert_eq!(one, grow_in_pool(4, 3));
        assert_eq!(one, grow_in_pool(3, 3));
    }
}
