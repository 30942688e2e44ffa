//! Per-path simplex weights over the predictors on each root-to-terminal path.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::growth::TreeOfPredictors;
use crate::losses::{self, LossKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFit {
    /// Least squares on the simplex, by projected gradient descent.
    #[default]
    SquaredError,
    /// Exhaustive simplex grid minimizing the configured loss.
    ConfiguredLossGridsearch,
}

fn default_max_iter() -> usize {
    1000
}
fn default_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    #[serde(default)]
    pub fit: WeightFit,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            fit: WeightFit::default(),
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }
}

/// Largest number of grid points the grid search enumerates per path.
pub const GRID_BUDGET: u128 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathWeight {
    pub terminal: usize,
    /// Node ids from the root to the terminal.
    pub path: Vec<usize>,
    pub weights: Vec<f64>,
    /// V² rows routed to the terminal.
    pub n_v2: usize,
    /// Loss of the root predictor minus loss of the weighted path predictor,
    /// both on the terminal's V² rows. Absent when it has none.
    #[serde(default)]
    pub delta_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathWeights {
    pub paths: Vec<PathWeight>,
}

impl PathWeights {
    pub fn get(&self, terminal: usize) -> Option<&PathWeight> {
        self.paths.iter().find(|p| p.terminal == terminal)
    }
}

/// Euclidean projection onto `{w ≥ 0, Σw = 1}` (sort-based, Duchi et al.).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // absorb rounding so the sum is 1 to machine precision
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    } else {
        let k = w.len() as f64;
        w.iter_mut().for_each(|x| *x = 1.0 / k);
    }
    w
}

/// Mean squared error of `Σ_k w_k cols[k]` against `y`.
pub fn squared_error(cols: &[Vec<f64>], w: &[f64], y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let h: f64 = cols.iter().zip(w).map(|(c, wk)| wk * c[i]).sum();
        total += (h - yi) * (h - yi);
    }
    total / y.len() as f64
}

struct Quadratic {
    k: usize,
    /// `HᵀH / n`, row-major.
    g: Vec<f64>,
    /// `Hᵀy / n`.
    b: Vec<f64>,
    c: f64,
}

impl Quadratic {
    fn new(cols: &[Vec<f64>], y: &[f64]) -> Self {
        let k = cols.len();
        let n = y.len() as f64;
        let mut g = vec![0.0; k * k];
        let mut b = vec![0.0; k];
        for i in 0..k {
            for j in 0..=i {
                let v: f64 = cols[i].iter().zip(&cols[j]).map(|(a, c)| a * c).sum::<f64>() / n;
                g[i * k + j] = v;
                g[j * k + i] = v;
            }
            b[i] = cols[i].iter().zip(y).map(|(a, c)| a * c).sum::<f64>() / n;
        }
        let c = y.iter().map(|v| v * v).sum::<f64>() / n;
        Self { k, g, b, c }
    }

    fn value(&self, w: &[f64]) -> f64 {
        let mut q = 0.0;
        for i in 0..self.k {
            let gw: f64 = (0..self.k).map(|j| self.g[i * self.k + j] * w[j]).sum();
            q += w[i] * (gw - 2.0 * self.b[i]);
        }
        q + self.c
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|i| {
                let gw: f64 = (0..self.k).map(|j| self.g[i * self.k + j] * w[j]).sum();
                2.0 * (gw - self.b[i])
            })
            .collect()
    }
}

/// Simplex-constrained least squares: projected gradient descent from the
/// uniform point with backtracking. The result is never worse (in exact
/// squared error) than the uniform start or any single vertex.
pub fn fit_simplex_least_squares(cols: &[Vec<f64>], y: &[f64], max_iter: usize, tol: f64) -> Vec<f64> {
    let k = cols.len();
    let uniform = vec![1.0 / k as f64; k];
    if k <= 1 || y.is_empty() {
        return uniform;
    }
    let q = Quadratic::new(cols, y);
    let mut w = uniform.clone();
    let mut f = q.value(&w);
    let mut step = 1.0;
    for _ in 0..max_iter {
        let grad = q.gradient(&w);
        let mapped = project_simplex(&sub_scaled(&w, &grad, 1.0));
        let stationarity = norm(&mapped.iter().zip(&w).map(|(a, b)| a - b).collect::<Vec<_>>());
        if stationarity < tol {
            break;
        }
        let mut t = step;
        let (next, f_next) = loop {
            let cand = project_simplex(&sub_scaled(&w, &grad, t));
            let d: Vec<f64> = cand.iter().zip(&w).map(|(a, b)| a - b).collect();
            let f_cand = q.value(&cand);
            let model = f + dot(&grad, &d) + dot(&d, &d) / (2.0 * t);
            if f_cand <= model || t < 1e-20 {
                break (cand, f_cand);
            }
            t *= 0.5;
        };
        let moved = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        w = next;
        f = f_next;
        step = (2.0 * t).min(1e6);
        if moved == 0.0 {
            break;
        }
    }
    let mut best = (squared_error(cols, &w, y), w);
    let mut candidates = vec![uniform];
    for v in 0..k {
        let mut e = vec![0.0; k];
        e[v] = 1.0;
        candidates.push(e);
    }
    for c in candidates {
        let l = squared_error(cols, &c, y);
        if l < best.0 {
            best = (l, c);
        }
    }
    best.1
}

fn sub_scaled(w: &[f64], g: &[f64], t: f64) -> Vec<f64> {
    w.iter().zip(g).map(|(a, b)| a - t * b).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// Grid resolution for a `k`-simplex: the largest `r ≤ 100` whose
/// `C(r + k − 1, k − 1)` grid points fit in [`GRID_BUDGET`].
pub fn grid_resolution(k: usize) -> usize {
    let mut r = 100usize;
    while r > 1 && binomial((r + k - 1) as u128, (k - 1) as u128) > GRID_BUDGET {
        r -= 1;
    }
    r
}

/// Visits every `w` with entries in `{0, 1/r, …, 1}` summing to 1, in
/// lexicographic order of the integer counts.
pub fn for_each_grid_point(k: usize, r: usize, mut f: impl FnMut(&[f64])) {
    fn rec(counts: &mut Vec<usize>, left: usize, k: usize, r: usize, f: &mut dyn FnMut(&[f64])) {
        if counts.len() == k - 1 {
            counts.push(left);
            let w: Vec<f64> = counts.iter().map(|&c| c as f64 / r as f64).collect();
            f(&w);
            counts.pop();
            return;
        }
        for c in 0..=left {
            counts.push(c);
            rec(counts, left - c, k, r, f);
            counts.pop();
        }
    }
    if k == 0 {
        return;
    }
    rec(&mut Vec::with_capacity(k), r, k, r, &mut f);
}

/// Grid point minimizing the configured loss; the first one found on ties.
pub fn fit_simplex_grid(cols: &[Vec<f64>], y: &[f64], kind: LossKind) -> Vec<f64> {
    let k = cols.len();
    if k <= 1 || y.is_empty() {
        return vec![1.0 / k as f64; k];
    }
    let r = grid_resolution(k);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut h = vec![0.0; y.len()];
    for_each_grid_point(k, r, |w| {
        for (i, hi) in h.iter_mut().enumerate() {
            *hi = cols.iter().zip(w).map(|(c, wk)| wk * c[i]).sum();
        }
        let l = losses::node_loss(kind, &h, y).map_or(f64::INFINITY, |v| v.0);
        if best.as_ref().is_none_or(|b| l < b.0) {
            best = Some((l, w.to_vec()));
        }
    });
    best.map(|b| b.1).unwrap_or_else(|| vec![1.0 / k as f64; k])
}

/// Fits the weights of every root-to-terminal path on the V² rows routed to
/// that terminal.
pub fn optimize_weights(
    tree: &TreeOfPredictors,
    data: &Dataset,
    v2: &[usize],
    loss: LossKind,
    cfg: &WeightConfig,
) -> PathWeights {
    let mut routed: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
    for &r in v2 {
        routed[tree.terminal_of(data.row(r))].push(r);
    }
    let paths = tree
        .terminals
        .par_iter()
        .map(|&t| {
            let path = tree.path_to(t);
            let rows = &routed[t];
            let y = data.labels_of(rows);
            let cols: Vec<Vec<f64>> = path
                .iter()
                .map(|&n| tree.nodes[n].predictor.score_rows(data, rows))
                .collect();
            let weights = match cfg.fit {
                WeightFit::SquaredError => fit_simplex_least_squares(&cols, &y, cfg.max_iter, cfg.tol),
                WeightFit::ConfiguredLossGridsearch => fit_simplex_grid(&cols, &y, loss),
            };
            PathWeight {
                terminal: t,
                path,
                weights,
                n_v2: rows.len(),
                delta_t: None,
            }
        })
        .collect();
    PathWeights { paths }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth::{grow, GrowConfig};
    use crate::learners::AlgorithmSpec;
    use crate::synthetic;
    use proptest::prelude::*;

    fn on_simplex(w: &[f64]) -> bool {
        w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }

    /// Best squared error over the 0.01 grid, by direct enumeration.
    fn grid_oracle(cols: &[Vec<f64>], y: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        match cols.len() {
            1 => best = squared_error(cols, &[1.0], y),
            2 => {
                for a in 0..=100 {
                    let w = [a as f64 / 100.0, (100 - a) as f64 / 100.0];
                    best = best.min(squared_error(cols, &w, y));
                }
            }
            3 => {
                for a in 0..=100 {
                    for b in 0..=(100 - a) {
                        let w = [a as f64 / 100.0, b as f64 / 100.0, (100 - a - b) as f64 / 100.0];
                        best = best.min(squared_error(cols, &w, y));
                    }
                }
            }
            _ => unreachable!(),
        }
        best
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let w = project_simplex(&[0.5, 0.5, 0.5]);
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn single_node_path_has_unit_weight() {
        let w = fit_simplex_least_squares(&[vec![0.3, 0.9]], &[0.0, 1.0], 1000, 1e-8);
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn exact_second_predictor_dominates() {
        let y = vec![0.1, 0.4, 0.9, 0.2, 0.7];
        let cols = vec![vec![0.5; 5], y.clone()];
        let w = fit_simplex_least_squares(&cols, &y, 1000, 1e-8);
        assert!(on_simplex(&w));
        assert!(w[1] >= w[0]);
        let fitted = squared_error(&cols, &w, &y);
        assert!(fitted <= squared_error(&cols, &[1.0, 0.0], &y));
        assert!(fitted <= squared_error(&cols, &[0.0, 1.0], &y));
        assert!(fitted <= grid_oracle(&cols, &y) + 1e-4);
    }

    #[test]
    fn empty_validation_gives_uniform() {
        let cols = vec![Vec::new(), Vec::new(), Vec::new()];
        assert_eq!(fit_simplex_least_squares(&cols, &[], 1000, 1e-8), vec![1.0 / 3.0; 3]);
        assert_eq!(fit_simplex_grid(&cols, &[], LossKind::Mse), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn deeper_node_need_not_dominate() {
        // the root predictor is exact, the terminal's is not
        let y = vec![0.0, 1.0, 0.0, 1.0];
        let cols = vec![y.clone(), vec![0.8, 0.2, 0.9, 0.1]];
        let w = fit_simplex_least_squares(&cols, &y, 1000, 1e-8);
        assert!(w[1] < w[0]);
    }

    #[test]
    fn grid_resolution_respects_budget() {
        assert_eq!(grid_resolution(1), 100);
        assert_eq!(grid_resolution(2), 100);
        assert_eq!(grid_resolution(3), 100);
        for k in 1..=20 {
            let r = grid_resolution(k);
            let mut count = 0u128;
            if k <= 6 {
                for_each_grid_point(k, r, |w| {
                    assert!(on_simplex(w));
                    count += 1;
                });
                assert_eq!(count, binomial((r + k - 1) as u128, (k - 1) as u128));
            }
            assert!(binomial((r + k - 1) as u128, (k - 1) as u128) <= GRID_BUDGET);
        }
    }

    #[test]
    fn grid_search_minimizes_configured_loss() {
        // error rate: no mix classifies every row, the best ones miss one
        let y = vec![0.0, 1.0, 0.0, 1.0];
        let cols = vec![vec![0.0, 0.0, 1.0, 1.0], vec![1.0, 1.0, 0.0, 1.0]];
        let w = fit_simplex_grid(&cols, &y, LossKind::ErrorRate);
        let h: Vec<f64> = (0..4).map(|i| w[0] * cols[0][i] + w[1] * cols[1][i]).collect();
        assert!(on_simplex(&w));
        assert_eq!(losses::loss_of(LossKind::ErrorRate, &h, &y).unwrap(), 0.25);
    }

    #[test]
    fn tree_weights_cover_every_terminal() {
        let data = synthetic::random_regression(600, 3, 21);
        let rows = data.all_rows();
        let (s, v1, v2): (Vec<usize>, Vec<usize>, Vec<usize>) = (
            rows.iter().copied().filter(|r| r % 3 == 0).collect(),
            rows.iter().copied().filter(|r| r % 3 == 1).collect(),
            rows.iter().copied().filter(|r| r % 3 == 2).collect(),
        );
        let algs = vec![AlgorithmSpec::builtin("lr").unwrap()];
        let grown = grow(&data, &s, &v1, &algs, LossKind::Mse.into(), GrowConfig::default()).unwrap();
        let pw = optimize_weights(&grown.tree, &data, &v2, LossKind::Mse, &WeightConfig::default());
        assert_eq!(pw.paths.len(), grown.tree.terminals.len());
        assert_eq!(pw.paths.iter().map(|p| p.n_v2).sum::<usize>(), v2.len());
        for p in &pw.paths {
            assert_eq!(p.path, grown.tree.path_to(p.terminal));
            assert_eq!(p.weights.len(), p.path.len());
            assert!(on_simplex(&p.weights));
        }
    }

    fn columns(max_k: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (1..=max_k, 0usize..40).prop_flat_map(|(k, n)| {
            (
                prop::collection::vec(prop::collection::vec(-2.0..2.0f64, n), k),
                prop::collection::vec(-1.0..1.0f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn fitted_weights_are_feasible_and_near_grid_optimum((cols, y) in columns(3)) {
            let w = fit_simplex_least_squares(&cols, &y, 1000, 1e-8);
            prop_assert!(on_simplex(&w));
            let fitted = squared_error(&cols, &w, &y);
            prop_assert!(fitted <= grid_oracle(&cols, &y) + 1e-4);
            for v in 0..cols.len() {
                let mut e = vec![0.0; cols.len()];
                e[v] = 1.0;
                prop_assert!(fitted <= squared_error(&cols, &e, &y));
            }
        }

        #[test]
        fn projection_is_feasible(v in prop::collection::vec(-5.0..5.0f64, 1..12)) {
            prop_assert!(on_simplex(&project_simplex(&v)));
        }
    }
}
