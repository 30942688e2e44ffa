//! JSON configuration for training runs and experiments.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DataError, Dataset, LabelKind, DEFAULT_RATIOS};
use crate::growth::Limits;
use crate::learners::{self, AlgorithmSpec, LearnerError};
use crate::losses::LossKind;
use crate::seeding;
use crate::weights::WeightConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// serde_json messages carry the line and column.
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("loss '{loss}' incompatible with label kind '{label_kind:?}' (it needs 0/1 labels)")]
    IncompatibleLoss { loss: LossKind, label_kind: LabelKind },
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// Which column holds the label and which feature columns are binary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSchema {
    pub label: String,
    #[serde(default)]
    pub binary: BTreeSet<String>,
}

impl DataSchema {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        read_json(path)
    }

    pub fn load_csv(&self, path: &Path) -> Result<Dataset, DataError> {
        dataset::load_csv(path, &self.label, &self.binary)
    }
}

/// A named set (`tops_lr`, `tops_b`, `"lr,rf"`) or explicit learner specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Instantiation {
    Named(String),
    Custom(Vec<AlgorithmSpec>),
}

impl Default for Instantiation {
    fn default() -> Self {
        Instantiation::Named("tops_lr".into())
    }
}

impl Instantiation {
    pub fn resolve(&self) -> Result<Vec<AlgorithmSpec>, ConfigError> {
        let specs = match self {
            Instantiation::Named(name) => learners::instantiation_set(name)?,
            Instantiation::Custom(specs) => specs.clone(),
        };
        if specs.is_empty() {
            return Err(ConfigError::Invalid("empty learner list".into()));
        }
        let ids: BTreeSet<&str> = specs.iter().map(|s| s.id.as_str()).collect();
        if ids.len() != specs.len() {
            return Err(ConfigError::Invalid("learner ids must be unique".into()));
        }
        Ok(specs)
    }

    pub fn label(&self) -> String {
        match self {
            Instantiation::Named(n) => n.clone(),
            Instantiation::Custom(specs) => specs
                .iter()
                .map(|s| s.id.as_str())
                .collect::<Vec<_>>()
                .join(","),
        }
    }
}

/// A baseline learner: built-in name or explicit spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Baseline {
    Named(String),
    Spec(AlgorithmSpec),
}

impl Baseline {
    pub fn resolve(&self) -> Result<AlgorithmSpec, ConfigError> {
        Ok(match self {
            Baseline::Named(n) => AlgorithmSpec::builtin(n)?,
            Baseline::Spec(s) => s.clone(),
        })
    }
}

fn default_delta() -> f64 {
    0.05
}
fn default_draws() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_draws")]
    pub n_draws: usize,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            n_draws: default_draws(),
        }
    }
}

fn default_ratios() -> (f64, f64, f64) {
    DEFAULT_RATIOS
}
fn default_loss() -> LossKind {
    LossKind::Mse
}

/// Settings of one training run (growth, weights, optional bounds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub instantiation: Instantiation,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_ratios")]
    pub ratios: (f64, f64, f64),
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub limits: Limits,
    #[serde(default)]
    pub weights: WeightConfig,
    #[serde(default)]
    pub bounds: Option<BoundsConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            instantiation: Instantiation::default(),
            loss: default_loss(),
            ratios: default_ratios(),
            seed: 0,
            limits: Limits::default(),
            weights: WeightConfig::default(),
            bounds: None,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        read_json(path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let (a, b, c) = self.ratios;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invalid(format!(
                "ratios {:?} must be positive and sum to 1",
                self.ratios
            )));
        }
        if !(self.weights.tol > 0.0) || self.weights.max_iter == 0 {
            return Err(ConfigError::Invalid("weight optimizer needs tol > 0 and max_iter ≥ 1".into()));
        }
        if let Some(b) = self.bounds {
            if !(b.delta > 0.0 && b.delta < 1.0) || b.n_draws == 0 {
                return Err(ConfigError::Invalid("bounds need 0 < delta < 1 and n_draws ≥ 1".into()));
            }
        }
        self.instantiation.resolve()?;
        Ok(())
    }
}

pub fn check_loss_labels(loss: LossKind, label_kind: LabelKind) -> Result<(), ConfigError> {
    if loss.needs_binary_labels() && label_kind != LabelKind::Binary {
        return Err(ConfigError::IncompatibleLoss { loss, label_kind });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    #[serde(flatten)]
    pub schema: DataSchema,
}

/// Train on rows whose `column` value is below `threshold`, test on the
/// rest. The column itself is dropped from the features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalSplit {
    pub column: String,
    pub threshold: f64,
}

fn default_runs() -> usize {
    10
}
fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DataSource,
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    /// 0 = single hold-out split per run.
    #[serde(default)]
    pub cv_folds: usize,
    /// Hold-out fraction when `cv_folds` is 0.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Per-run seeds; derived from `seed` when absent.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
    #[serde(default)]
    pub temporal_split: Option<TemporalSplit>,
}

impl ExperimentConfig {
    /// Reads a config; a relative dataset path is taken relative to the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = read_json(path)?;
        if cfg.dataset.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset.path = dir.join(&cfg.dataset.path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate()?;
        if self.n_runs == 0 {
            return Err(ConfigError::Invalid("n_runs must be at least 1".into()));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.len() != self.n_runs {
                return Err(ConfigError::Invalid(format!(
                    "{} seeds given for {} runs",
                    seeds.len(),
                    self.n_runs
                )));
            }
        }
        if self.cv_folds == 1 {
            return Err(ConfigError::Invalid("cv_folds must be 0 or at least 2".into()));
        }
        if self.cv_folds == 0 && !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(ConfigError::Invalid("test_fraction must lie in (0, 1)".into()));
        }
        if self.temporal_split.is_some() && self.cv_folds > 0 {
            return Err(ConfigError::Invalid("temporal_split excludes cv_folds".into()));
        }
        for b in &self.baselines {
            b.resolve()?;
        }
        Ok(())
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| {
            (0..self.n_runs)
                .map(|r| seeding::derive(&[self.train.seed, r as u64]))
                .collect()
        })
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_experiment_config_gets_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"dataset": {"path": "d.csv", "label": "y"}, "loss": "mae"}"#,
        )
        .unwrap();
        assert_eq!(cfg.n_runs, 10);
        assert_eq!(cfg.cv_folds, 0);
        assert_eq!(cfg.train.ratios, DEFAULT_RATIOS);
        assert_eq!(cfg.train.loss, LossKind::Mae);
        assert_eq!(cfg.train.instantiation.resolve().unwrap().len(), 1);
        assert_eq!(cfg.run_seeds().len(), 10);
        cfg.validate().unwrap();
    }

    #[test]
    fn custom_learners_and_baselines_parse() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{
                "dataset": {"path": "d.csv", "label": "y", "binary": ["g"]},
                "instantiation": [{"id": "deep", "kind": "tree", "max_depth": 6}],
                "baselines": ["lr", {"id": "small_rf", "kind": "random_forest", "n_trees": 5}],
                "n_runs": 2, "seeds": [4, 5]
            }"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.instantiation.resolve().unwrap()[0].id, "deep");
        assert_eq!(cfg.baselines[1].resolve().unwrap().id, "small_rf");
        assert_eq!(cfg.run_seeds(), vec![4, 5]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            r#"{"dataset": {"path": "d.csv", "label": "y"}, "n_runs": 0}"#,
            r#"{"dataset": {"path": "d.csv", "label": "y"}, "n_runs": 2, "seeds": [1]}"#,
            r#"{"dataset": {"path": "d.csv", "label": "y"}, "cv_folds": 1}"#,
            r#"{"dataset": {"path": "d.csv", "label": "y"}, "ratios": [0.5, 0.5, 0.0]}"#,
            r#"{"dataset": {"path": "d.csv", "label": "y"}, "instantiation": "nope"}"#,
        ];
        for text in bad {
            let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
            assert!(cfg.validate().is_err(), "{text}");
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "{\n  \"dataset\": {\"path\": \"d.csv\", \"label\": \"y\"},\n  \"n_runs\": \"x\"\n}").unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let r: Result<TrainConfig, _> = serde_json::from_str(r#"{"los": "mae"}"#);
        assert!(r.is_err());
    }

    #[test]
    fn auc_needs_binary_labels() {
        let err = check_loss_labels(LossKind::OneMinusAuc, LabelKind::Real).unwrap_err();
        assert!(err.to_string().contains("incompatible with label kind"));
        check_loss_labels(LossKind::Mse, LabelKind::Real).unwrap();
        check_loss_labels(LossKind::OneMinusAuc, LabelKind::Binary).unwrap();
    }
}
