//! Seeded synthetic datasets used by tests, benches and the bundled fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, FeatureKind, FeatureSpec, LabelKind};

fn specs(kinds: &[FeatureKind]) -> Vec<FeatureSpec> {
    kinds
        .iter()
        .enumerate()
        .map(|(index, &kind)| FeatureSpec {
            index,
            name: format!("x{index}"),
            kind,
        })
        .collect()
}

/// One feature on [0, 1]: `y = x` below 0.5 and `y = 1 − x` above, plus
/// uniform noise on `[−noise, noise)`.
pub fn piecewise_linear(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random();
        let y = if x < 0.5 { x } else { 1.0 - x };
        let e = if noise > 0.0 {
            rng.random_range(-noise..noise)
        } else {
            0.0
        };
        rows.push(vec![x]);
        labels.push(y + e);
    }
    Dataset::new(rows, labels, specs(&[FeatureKind::Continuous]))
        .expect("valid synthetic data")
        .with_label_name("y")
        .with_label_kind(LabelKind::Real)
}

/// `y = a·x + b` exactly, for the no-split case.
pub fn exact_linear(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
    let labels = rows.iter().map(|r| 0.3 + 0.5 * r[0] - 0.25 * r[1]).collect();
    Dataset::new(
        rows,
        labels,
        specs(&[FeatureKind::Continuous, FeatureKind::Continuous]),
    )
    .expect("valid synthetic data")
    .with_label_kind(LabelKind::Real)
}

/// Binary group indicator `g` and continuous `x`; the slope in `x` flips sign
/// between groups. Labels are `1[y > 0.5]` when `classify` is set.
pub fn interaction(n: usize, noise: f64, classify: bool, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let g = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let x: f64 = rng.random();
        let mut y = if g == 1.0 { x } else { 1.0 - x };
        if noise > 0.0 {
            y += rng.random_range(-noise..noise);
        }
        rows.push(vec![g, x]);
        labels.push(if classify { f64::from(u8::from(y > 0.5)) } else { y });
    }
    let kind = if classify {
        LabelKind::Binary
    } else {
        LabelKind::Real
    };
    Dataset::new(
        rows,
        labels,
        specs(&[FeatureKind::Binary, FeatureKind::Continuous]),
    )
    .expect("valid synthetic data")
    .with_label_kind(kind)
}

/// `d` uniform features; the label is a random linear function whose
/// coefficients change across the halves of two randomly chosen features,
/// plus uniform noise. Exercises splitting with many candidates.
pub fn random_regression(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f1 = rng.random_range(0..d);
    let f2 = rng.random_range(0..d);
    let mut coef = [[0.0; 16]; 4];
    for c in coef.iter_mut() {
        for v in c.iter_mut().take(d.min(16)) {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random()).collect())
        .collect();
    let labels = rows
        .iter()
        .map(|r| {
            let k = usize::from(r[f1] >= 0.5) * 2 + usize::from(r[f2] >= 0.5);
            let lin: f64 = r.iter().zip(&coef[k]).map(|(x, c)| x * c).sum();
            lin + rng.random_range(-0.1..0.1)
        })
        .collect();
    Dataset::new(rows, labels, specs(&vec![FeatureKind::Continuous; d]))
        .expect("valid synthetic data")
        .with_label_kind(LabelKind::Real)
}

/// Binary labels from a noisy logistic model with a regime change on
/// feature 0; for classification losses.
pub fn random_classification(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random()).collect())
        .collect();
    let labels = rows
        .iter()
        .map(|r| {
            let sign = if r[0] < 0.5 { 1.0 } else { -1.0 };
            let z: f64 = sign * r.iter().zip(&w).map(|(x, c)| (x - 0.5) * c).sum::<f64>();
            let p = 1.0 / (1.0 + (-4.0 * z).exp());
            f64::from(u8::from(rng.random_bool(p)))
        })
        .collect();
    Dataset::new(rows, labels, specs(&vec![FeatureKind::Continuous; d]))
        .expect("valid synthetic data")
        .with_label_kind(LabelKind::Binary)
}
