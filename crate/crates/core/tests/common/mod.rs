//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

/// O(n²) pair counting; ties count one half. `None` without both classes.
pub fn brute_auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let (mut hits, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] < 0.5 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] >= 0.5 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                hits += 1.0;
            } else if si == sj {
                hits += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| hits / pairs)
}

/// Γ(k/2) for a positive integer k, from Γ(1/2) = √π and Γ(1) = 1.
fn gamma_half(k: usize) -> f64 {
    let mut z = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    let mut g = if k.is_multiple_of(2) { 1.0 } else { std::f64::consts::PI.sqrt() };
    while z < k as f64 / 2.0 - 1e-12 {
        g *= z;
        z += 1.0;
    }
    g
}

/// Two-sided Student-t tail probability by Simpson integration of the density
/// on [0, |t|] with integer degrees of freedom.
pub fn t_two_sided_p(t: f64, df: usize) -> f64 {
    let nu = df as f64;
    let c = gamma_half(df + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(df));
    let f = |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    let b = t.abs();
    let n = 200_000;
    let h = b / n as f64;
    let mut s = f(0.0) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    (1.0 - 2.0 * s * h / 3.0).max(0.0)
}

/// Pooled two-sample t statistic and degrees of freedom.
pub fn pooled_t(a: &[f64], b: &[f64]) -> (f64, usize) {
    let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (m(a), m(b));
    let ss: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
    let df = a.len() + b.len() - 2;
    let sp2 = ss / df as f64;
    let t = (ma - mb) / (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
    (t, df)
}

#[allow(clippy::needless_range_loop)]
/// Least squares with intercept via Householder QR on the design matrix.
/// Returns `[intercept, coef...]`.
pub fn ols(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let p = x[0].len() + 1;
    let mut a: Vec<Vec<f64>> = x
        .iter()
        .map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect())
        .collect();
    let mut b = y.to_vec();
    for k in 0..p {
        let norm = (k..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..p {
            let d: f64 = (k..n).map(|i| v[i - k] * a[i][j]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..n {
                a[i][j] -= d * v[i - k];
            }
        }
        let d: f64 = (k..n).map(|i| v[i - k] * b[i]).sum::<f64>() * 2.0 / vnorm2;
        for i in k..n {
            b[i] -= d * v[i - k];
        }
    }
    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let s: f64 = ((k + 1)..p).map(|j| a[k][j] * beta[j]).sum();
        beta[k] = (b[k] - s) / a[k][k];
    }
    beta
}

/// Every point of the simplex grid with step `1/r` in `k` dimensions.
pub fn simplex_grid(k: usize, r: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == k - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / r as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(k, left - c, r, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, r, r, &mut Vec::new(), &mut out);
    out
}
