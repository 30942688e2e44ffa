//! Base learners. An [`AlgorithmSpec`] fixes a learner and all its
//! hyperparameters; training it on a sample yields a [`Predictor`] that scores
//! any feature vector with a real number.

mod boost;
mod forest;
mod linear;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::seeding;

pub use boost::{BoostVariant, BoostedStumps};
pub use forest::Forest;
pub use linear::{LinearModel, LogisticModel};
pub use tree::RegressionTree;

pub const DEFAULT_MIN_TRAIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LearnerError {
    #[error("insufficient data: {got} training rows, need at least {need}")]
    InsufficientData { got: usize, need: usize },
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("feature vector has {got} entries, predictor expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown learner or instantiation '{0}'")]
    Unknown(String),
}

fn default_ridge() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-8
}
fn default_l2() -> f64 {
    1e-4
}
fn default_min_leaf() -> usize {
    1
}
fn default_rounds() -> usize {
    50
}
fn default_trees() -> usize {
    50
}
fn default_forest_depth() -> usize {
    8
}
fn default_forest_leaf() -> usize {
    5
}
fn default_true() -> bool {
    true
}

/// Learner family plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    LinearRegression {
        /// Diagonal ridge added only when the normal system is singular.
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
    LogisticRegression {
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_l2")]
        l2: f64,
    },
    Stump,
    Tree {
        max_depth: usize,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
    },
    Adaboost {
        #[serde(default = "default_rounds")]
        rounds: usize,
        #[serde(default)]
        variant: BoostVariant,
    },
    RandomForest {
        #[serde(default = "default_trees")]
        n_trees: usize,
        #[serde(default = "default_forest_depth")]
        max_depth: usize,
        #[serde(default = "default_forest_leaf")]
        min_leaf: usize,
        /// Features tried per split; `None` means ⌈√d⌉.
        #[serde(default)]
        max_features: Option<usize>,
        #[serde(default = "default_true")]
        bootstrap: bool,
        #[serde(default)]
        seed: u64,
    },
}

impl LearnerKind {
    pub fn linear_regression() -> Self {
        LearnerKind::LinearRegression {
            ridge: default_ridge(),
        }
    }

    pub fn logistic_regression() -> Self {
        LearnerKind::LogisticRegression {
            max_iter: default_max_iter(),
            tol: default_tol(),
            l2: default_l2(),
        }
    }

    pub fn adaboost(variant: BoostVariant) -> Self {
        LearnerKind::Adaboost {
            rounds: default_rounds(),
            variant,
        }
    }

    pub fn random_forest() -> Self {
        LearnerKind::RandomForest {
            n_trees: default_trees(),
            max_depth: default_forest_depth(),
            min_leaf: default_forest_leaf(),
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            LearnerKind::LinearRegression { .. } => "linear_regression",
            LearnerKind::LogisticRegression { .. } => "logistic_regression",
            LearnerKind::Stump => "stump",
            LearnerKind::Tree { .. } => "tree",
            LearnerKind::Adaboost { .. } => "adaboost",
            LearnerKind::RandomForest { .. } => "random_forest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: LearnerKind,
}

impl AlgorithmSpec {
    pub fn new(id: impl Into<String>, kind: LearnerKind) -> Self {
        Self {
            id: id.into(),
            kind,
        }
    }

    /// Built-in learner by short name, with default hyperparameters.
    pub fn builtin(name: &str) -> Result<Self, LearnerError> {
        let spec = match name {
            "lr" | "linear_regression" => Self::new("lr", LearnerKind::linear_regression()),
            "logit" | "logistic_regression" => {
                Self::new("logit", LearnerKind::logistic_regression())
            }
            "stump" => Self::new("stump", LearnerKind::Stump),
            "tree" => Self::new(
                "tree",
                LearnerKind::Tree {
                    max_depth: 3,
                    min_leaf: 5,
                },
            ),
            "adaboost" => Self::new("adaboost", LearnerKind::adaboost(BoostVariant::Discrete)),
            "logitboost" => Self::new("logitboost", LearnerKind::adaboost(BoostVariant::Logit)),
            "rf" | "random_forest" => Self::new("rf", LearnerKind::random_forest()),
            other => return Err(LearnerError::Unknown(other.to_string())),
        };
        Ok(spec)
    }
}

/// Resolves `tops_lr`, `tops_b`, or a comma-separated list of built-in names.
pub fn instantiation_set(name: &str) -> Result<Vec<AlgorithmSpec>, LearnerError> {
    match name.trim() {
        "tops_lr" => Ok(vec![AlgorithmSpec::builtin("lr")?]),
        // AdaBoost, Linear Regression, Logistic Regression, LogitBoost, Random Forest
        "tops_b" => ["adaboost", "lr", "logit", "logitboost", "rf"]
            .iter()
            .map(|n| AlgorithmSpec::builtin(n))
            .collect(),
        list => {
            let specs = list
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(AlgorithmSpec::builtin)
                .collect::<Result<Vec<_>, _>>()?;
            if specs.is_empty() {
                return Err(LearnerError::Unknown(name.to_string()));
            }
            Ok(specs)
        }
    }
}

/// Training rows viewed through a dataset, with targets that default to the
/// labels but may be replaced (pseudo-targets, boosting residuals).
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    pub data: &'a Dataset,
    pub rows: &'a [usize],
    pub targets: Vec<f64>,
}

impl<'a> Sample<'a> {
    pub fn new(data: &'a Dataset, rows: &'a [usize]) -> Self {
        Self {
            data,
            rows,
            targets: data.labels_of(rows),
        }
    }

    pub fn with_targets(data: &'a Dataset, rows: &'a [usize], targets: Vec<f64>) -> Self {
        assert_eq!(rows.len(), targets.len());
        Self {
            data,
            rows,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.n_features()
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        self.data.row(self.rows[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearModel),
    Logistic(LogisticModel),
    Tree(RegressionTree),
    Boosted(BoostedStumps),
    Forest(Forest),
}

impl Model {
    #[inline]
    fn score(&self, x: &[f64]) -> f64 {
        match self {
            Model::Linear(m) => m.score(x),
            Model::Logistic(m) => m.score(x),
            Model::Tree(m) => m.score(x),
            Model::Boosted(m) => m.score(x),
            Model::Forest(m) => m.score(x),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Model::Linear(m) => m.is_finite(),
            Model::Logistic(m) => m.is_finite(),
            Model::Tree(m) => m.is_finite(),
            Model::Boosted(m) => m.is_finite(),
            Model::Forest(m) => m.is_finite(),
        }
    }
}

/// A trained model: `A(E)` for a learner `A` and training rows `E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub algorithm: String,
    pub dim: usize,
    /// Tree node whose training rows produced this predictor, once placed.
    pub trained_on: Option<usize>,
    pub model: Model,
}

impl Predictor {
    pub fn score(&self, x: &[f64]) -> Result<f64, LearnerError> {
        if x.len() != self.dim {
            return Err(LearnerError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(self.model.score(x))
    }

    /// Scores a row known to have the right dimension.
    #[inline]
    pub fn score_row(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.model.score(x)
    }

    pub fn score_rows(&self, data: &Dataset, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&r| self.score_row(data.row(r))).collect()
    }
}

/// Trains `spec` on `sample`. `seed` feeds randomized learners and should be
/// derived from the caller's context (see [`crate::seeding`]).
pub fn train(
    spec: &AlgorithmSpec,
    sample: &Sample<'_>,
    min_samples: usize,
    seed: u64,
) -> Result<Predictor, LearnerError> {
    let need = min_samples.max(1);
    if sample.len() < need {
        return Err(LearnerError::InsufficientData {
            got: sample.len(),
            need,
        });
    }
    let model = match &spec.kind {
        LearnerKind::LinearRegression { ridge } => {
            Model::Linear(linear::fit_least_squares(sample, *ridge)?)
        }
        LearnerKind::LogisticRegression { max_iter, tol, l2 } => {
            Model::Logistic(linear::fit_logistic(sample, *max_iter, *tol, *l2)?)
        }
        LearnerKind::Stump => Model::Tree(RegressionTree::fit(sample, None, 1, 1, None, None)),
        LearnerKind::Tree {
            max_depth,
            min_leaf,
        } => Model::Tree(RegressionTree::fit(
            sample,
            None,
            *max_depth,
            *min_leaf,
            None,
            None,
        )),
        LearnerKind::Adaboost { rounds, variant } => {
            Model::Boosted(boost::fit(sample, *rounds, *variant))
        }
        LearnerKind::RandomForest {
            n_trees,
            max_depth,
            min_leaf,
            max_features,
            bootstrap,
            seed: spec_seed,
        } => Model::Forest(forest::fit(
            sample,
            forest::ForestParams {
                n_trees: *n_trees,
                max_depth: *max_depth,
                min_leaf: *min_leaf,
                max_features: *max_features,
                bootstrap: *bootstrap,
            },
            seeding::derive(&[seed, *spec_seed]),
        )),
    };
    if !model.is_finite() {
        return Err(LearnerError::FitFailed(format!(
            "{} produced non-finite parameters",
            spec.id
        )));
    }
    Ok(Predictor {
        algorithm: spec.id.clone(),
        dim: sample.dim(),
        trained_on: None,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn data_1d(xs: &[f64], ys: &[f64]) -> Dataset {
        Dataset::from_rows(xs.iter().map(|&x| vec![x]).collect(), ys.to_vec()).unwrap()
    }

    fn all_builtins() -> Vec<AlgorithmSpec> {
        [
            "lr",
            "logit",
            "stump",
            "tree",
            "adaboost",
            "logitboost",
            "rf",
        ]
        .iter()
        .map(|n| AlgorithmSpec::builtin(n).unwrap())
        .collect()
    }

    #[test]
    fn two_point_interpolation() {
        let data = data_1d(&[0.0, 1.0], &[0.0, 1.0]);
        let rows = data.all_rows();
        let p = train(
            &AlgorithmSpec::builtin("lr").unwrap(),
            &Sample::new(&data, &rows),
            1,
            0,
        )
        .unwrap();
        assert!((p.score(&[0.5]).unwrap() - 0.5).abs() < 1e-12);
        assert!(p.score(&[0.0]).unwrap().abs() < 1e-12);
        assert!(matches!(
            p.score(&[0.0, 1.0]),
            Err(LearnerError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn stump_separates_step() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| if x < 0.5 { 0.0 } else { 1.0 }).collect();
        let data = data_1d(&xs, &ys);
        let rows = data.all_rows();
        let p = train(
            &AlgorithmSpec::builtin("stump").unwrap(),
            &Sample::new(&data, &rows),
            10,
            0,
        )
        .unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(crate::losses::threshold(p.score(&[*x]).unwrap()), *y);
        }
    }

    #[test]
    fn rank_deficient_design_uses_ridge() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let v = i as f64 / 11.0;
                vec![v, v]
            })
            .collect();
        let ys: Vec<f64> = (0..12).map(|i| 2.0 * i as f64 / 11.0 + 1.0).collect();
        let data = Dataset::from_rows(rows, ys).unwrap();
        let idx = data.all_rows();
        let p = train(
            &AlgorithmSpec::builtin("lr").unwrap(),
            &Sample::new(&data, &idx),
            10,
            0,
        )
        .unwrap();
        let Model::Linear(m) = &p.model else {
            panic!("expected linear model")
        };
        assert!(m.is_finite());
        assert!((p.score(&[0.5, 0.5]).unwrap() - 2.0).abs() < 1e-4);
    }

    #[test]
    fn depth_zero_single_tree_forest_is_label_mean() {
        let data = data_1d(&[0.1, 0.4, 0.6, 0.9], &[0.0, 1.0, 1.0, 1.0]);
        let rows = data.all_rows();
        let spec = AlgorithmSpec::new(
            "rf0",
            LearnerKind::RandomForest {
                n_trees: 1,
                max_depth: 0,
                min_leaf: 1,
                max_features: None,
                bootstrap: false,
                seed: 3,
            },
        );
        let p = train(&spec, &Sample::new(&data, &rows), 1, 11).unwrap();
        for x in [0.0, 0.3, 1.0] {
            assert_eq!(p.score(&[x]).unwrap(), 0.75);
        }

        // with bootstrap the constant is the mean of the resampled labels
        let spec = AlgorithmSpec::new(
            "rf0b",
            LearnerKind::RandomForest {
                n_trees: 1,
                max_depth: 0,
                min_leaf: 1,
                max_features: None,
                bootstrap: true,
                seed: 3,
            },
        );
        let p = train(&spec, &Sample::new(&data, &rows), 1, 11).unwrap();
        let c = p.score(&[0.0]).unwrap();
        assert!((0.0..=1.0).contains(&c));
        assert_eq!(p.score(&[0.95]).unwrap(), c);
        assert_eq!((c * 4.0).fract(), 0.0);
    }

    #[test]
    fn insufficient_data_is_reported() {
        let data = data_1d(&[0.1, 0.2], &[0.0, 1.0]);
        let rows = data.all_rows();
        let err = train(
            &AlgorithmSpec::builtin("lr").unwrap(),
            &Sample::new(&data, &rows),
            10,
            0,
        )
        .unwrap_err();
        assert_eq!(err, LearnerError::InsufficientData { got: 2, need: 10 });
    }

    #[test]
    fn logistic_rejects_out_of_range_targets() {
        let data = data_1d(&[0.1, 0.2, 0.3], &[0.0, 2.0, 1.0]);
        let rows = data.all_rows();
        let err = train(
            &AlgorithmSpec::builtin("logit").unwrap(),
            &Sample::new(&data, &rows),
            1,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, LearnerError::FitFailed(_)));
    }

    #[test]
    fn instantiation_sets() {
        assert_eq!(instantiation_set("tops_lr").unwrap().len(), 1);
        let b = instantiation_set("tops_b").unwrap();
        assert_eq!(b.len(), 5);
        let families: Vec<_> = b.iter().map(|s| s.kind.family()).collect();
        assert_eq!(
            families,
            [
                "adaboost",
                "linear_regression",
                "logistic_regression",
                "adaboost",
                "random_forest"
            ]
        );
        let custom = instantiation_set("stump,tree").unwrap();
        assert_eq!(
            custom.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(),
            ["stump", "tree"]
        );
        assert!(instantiation_set("svm").is_err());
        assert!(instantiation_set("").is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        for spec in all_builtins() {
            let text = serde_json::to_string(&spec).unwrap();
            let back: AlgorithmSpec = serde_json::from_str(&text).unwrap();
            assert_eq!(back, spec);
        }
        let parsed: AlgorithmSpec =
            serde_json::from_str(r#"{"id":"deep","kind":"tree","max_depth":6}"#).unwrap();
        assert_eq!(
            parsed.kind,
            LearnerKind::Tree {
                max_depth: 6,
                min_leaf: 1
            }
        );
    }

    fn random_data(seed: u64, n: usize, d: usize) -> Dataset {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect();
        let ys = rows
            .iter()
            .map(|r| {
                let s: f64 = r.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * v).sum();
                if s + 0.3 * rng.random::<f64>() > d as f64 * 0.6 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Dataset::from_rows(rows, ys).unwrap()
    }

    #[test]
    fn residuals_are_orthogonal_to_design() {
        let data = random_data(5, 200, 4);
        let rows = data.all_rows();
        let p = train(
            &AlgorithmSpec::builtin("lr").unwrap(),
            &Sample::new(&data, &rows),
            10,
            0,
        )
        .unwrap();
        let mut grad = [0.0f64; 5];
        for &r in &rows {
            let resid = data.label(r) - p.score_row(data.row(r));
            grad[0] += resid;
            for (j, v) in data.row(r).iter().enumerate() {
                grad[j + 1] += resid * v;
            }
        }
        let scaled = grad.iter().map(|g| g.abs() / rows.len() as f64).fold(0.0, f64::max);
        assert!(scaled <= 1e-6, "max |X^T r|/n = {scaled}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn learners_are_deterministic_and_beat_constant(seed in 0u64..1000) {
            let data = random_data(seed, 60, 3);
            let rows = data.all_rows();
            let sample = Sample::new(&data, &rows);
            let ys = data.labels();
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            let const_mse = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
            let pos = ys.iter().filter(|&&y| y == 1.0).count();
            let const_err = pos.min(ys.len() - pos) as f64 / ys.len() as f64;
            for spec in all_builtins() {
                let a = train(&spec, &sample, 10, seed).unwrap();
                let b = train(&spec, &sample, 10, seed).unwrap();
                let sa = a.score_rows(&data, &rows);
                prop_assert_eq!(&sa, &b.score_rows(&data, &rows));
                prop_assert!(sa.iter().all(|s| s.is_finite()));
                let mse = sa.iter().zip(ys).map(|(s, y)| (s - y).powi(2)).sum::<f64>() / ys.len() as f64;
                let err = sa.iter().zip(ys).filter(|(s, y)| crate::losses::threshold(**s) != **y).count() as f64 / ys.len() as f64;
                // classifiers are compared on the loss they optimize
                let ok = match spec.kind.family() {
                    "logistic_regression" | "adaboost" => err <= const_err + 1e-12,
                    _ => mse <= const_mse + 1e-12,
                };
                prop_assert!(ok, "{} mse {} (const {}), err {} (const {})", spec.id, mse, const_mse, err, const_err);
            }
        }
    }
}
