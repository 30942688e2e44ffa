//! Trees of predictors.
//!
//! A tree of predictors partitions the feature space recursively and attaches
//! a trained model to every node. Growth jointly picks the split, the base
//! learner and the training region of each child against a first validation
//! set; per-path simplex weights fitted on a second validation set combine the
//! predictions along the path of a new instance.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod config;
pub mod dataset;
pub mod growth;
pub mod harness;
pub mod learners;
pub mod losses;
pub mod model;
pub mod seeding;
pub mod synthetic;
pub mod weights;

pub use dataset::{Cell, Dataset, FeatureKind, FeatureSpec, LabelKind, NormalizationParams, Partition};
pub use growth::{GrowConfig, Limits, NodeRecord, TreeOfPredictors};
pub use learners::{AlgorithmSpec, LearnerKind, Predictor};
pub use losses::{LossKind, LossSpec, ScoredSet};
pub use model::{load_model, save_model, OverallPredictor};
pub use weights::{PathWeights, WeightConfig, WeightFit};
