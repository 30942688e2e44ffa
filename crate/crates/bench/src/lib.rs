//! Shared fixtures for the criterion benches.

use tops_core::dataset::split_rows;
use tops_core::seeding::splitmix64;
use tops_core::{synthetic, Dataset, Partition};

/// Uniform draws on [0, 1) from a splitmix64 stream.
pub fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = splitmix64(s);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

/// Scores with ties (20 levels) and roughly balanced 0/1 labels.
pub fn scored(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let u = uniform(2 * n, seed);
    let scores = u[..n].iter().map(|x| (x * 20.0).floor() / 20.0).collect();
    let labels = u[n..].iter().map(|&x| f64::from(u8::from(x < 0.5))).collect();
    (scores, labels)
}

/// Regression data with its default three-way partition.
pub fn regression(n: usize, d: usize, seed: u64) -> (Dataset, Partition) {
    let data = synthetic::random_regression(n, d, seed);
    let p = split_rows(&data.all_rows(), (0.75, 0.15, 0.10), seed).expect("valid ratios");
    (data, p)
}

/// `k` prediction columns of length `n` and a target.
pub fn path_columns(k: usize, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let cols = (0..k).map(|j| uniform(n, seed + j as u64)).collect();
    (cols, uniform(n, seed + 1000))
}
