use serde::{Deserialize, Serialize};

use super::{LearnerError, Sample};

/// Affine scorer `intercept + coef · x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    /// Set when the normal system was singular and the ridge fallback ran.
    pub ridged: bool,
}

impl LinearModel {
    #[inline]
    pub fn score(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.coef, x)
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.coef.iter().all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub iterations: usize,
}

impl LogisticModel {
    #[inline]
    pub fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.intercept + dot(&self.coef, x))
    }

    pub fn is_finite(&self) -> bool {
        self.intercept.is_finite() && self.coef.iter().all(|c| c.is_finite())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Dense symmetric system stored row-major, dimension `p`.
struct Normal {
    p: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Normal {
    fn new(p: usize) -> Self {
        Self {
            p,
            a: vec![0.0; p * p],
            b: vec![0.0; p],
        }
    }

    /// Accumulates `w · z zᵀ` and `w · t · z` for `z = [1, x]`.
    fn add(&mut self, x: &[f64], t: f64, w: f64) {
        let p = self.p;
        let z = |k: usize| if k == 0 { 1.0 } else { x[k - 1] };
        for i in 0..p {
            let wi = w * z(i);
            self.b[i] += wi * t;
            for j in 0..=i {
                self.a[i * p + j] += wi * z(j);
            }
        }
    }

    fn symmetrize(&mut self) {
        let p = self.p;
        for i in 0..p {
            for j in 0..i {
                self.a[j * p + i] = self.a[i * p + j];
            }
        }
    }
}

/// Cholesky solve of `a x = b`. Pivots at or below `rel_tol · max diag` are
/// treated as singular and yield `None`.
fn cholesky_solve(a: &[f64], b: &[f64], p: usize, rel_tol: f64) -> Option<Vec<f64>> {
    let max_diag = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max);
    let floor = rel_tol * max_diag.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if !(s > floor) {
                    return None;
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    Some(x)
}

const SINGULAR_REL_TOL: f64 = 1e-12;

/// Solves the normal system, falling back to `a + ridge·I` (escalating the
/// ridge tenfold a few times) when it is singular. Returns the solution and
/// whether the fallback ran.
fn solve_with_ridge(sys: &Normal, ridge: f64) -> Option<(Vec<f64>, bool)> {
    if let Some(x) = cholesky_solve(&sys.a, &sys.b, sys.p, SINGULAR_REL_TOL) {
        return Some((x, false));
    }
    let mut eps = ridge.max(f64::MIN_POSITIVE);
    for _ in 0..8 {
        let mut a = sys.a.clone();
        for i in 0..sys.p {
            a[i * sys.p + i] += eps;
        }
        if let Some(x) = cholesky_solve(&a, &sys.b, sys.p, 0.0) {
            return Some((x, true));
        }
        eps *= 10.0;
    }
    None
}

pub(super) fn fit_least_squares(sample: &Sample<'_>, ridge: f64) -> Result<LinearModel, LearnerError> {
    let p = sample.dim() + 1;
    let mut sys = Normal::new(p);
    for (i, &t) in sample.targets.iter().enumerate() {
        sys.add(sample.x(i), t, 1.0);
    }
    sys.symmetrize();
    let (beta, ridged) = solve_with_ridge(&sys, ridge)
        .ok_or_else(|| LearnerError::FitFailed("least squares system unsolvable".into()))?;
    Ok(LinearModel {
        intercept: beta[0],
        coef: beta[1..].to_vec(),
        ridged,
    })
}

/// Iteratively reweighted least squares with a small L2 penalty on the
/// non-intercept coefficients. Targets must lie in `[0, 1]`.
pub(super) fn fit_logistic(
    sample: &Sample<'_>,
    max_iter: usize,
    tol: f64,
    l2: f64,
) -> Result<LogisticModel, LearnerError> {
    if sample
        .targets
        .iter()
        .any(|t| !(0.0..=1.0).contains(t))
    {
        return Err(LearnerError::FitFailed(
            "logistic regression needs targets in [0, 1]".into(),
        ));
    }
    let p = sample.dim() + 1;
    let mut beta = vec![0.0; p];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut sys = Normal::new(p);
        for (i, &t) in sample.targets.iter().enumerate() {
            let x = sample.x(i);
            let eta = beta[0] + dot(&beta[1..], x);
            let mu = sigmoid(eta);
            let w = (mu * (1.0 - mu)).max(1e-10);
            // gradient form: solve H Δ = Zᵀ(t − μ) − λβ
            sys.add(x, (t - mu) / w, w);
        }
        sys.symmetrize();
        for (k, b) in beta.iter().enumerate().skip(1) {
            sys.a[k * p + k] += l2;
            sys.b[k] -= l2 * b;
        }
        let (delta, _) = solve_with_ridge(&sys, 1e-8)
            .ok_or_else(|| LearnerError::FitFailed("IRLS system unsolvable".into()))?;
        let step = delta.iter().map(|d| d.abs()).fold(0.0, f64::max);
        for (b, d) in beta.iter_mut().zip(&delta) {
            *b += d;
        }
        if !step.is_finite() {
            return Err(LearnerError::FitFailed("IRLS diverged".into()));
        }
        if step < tol {
            break;
        }
    }
    Ok(LogisticModel {
        intercept: beta[0],
        coef: beta[1..].to_vec(),
        iterations,
    })
}
