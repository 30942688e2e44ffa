//! The overall predictor: route to a terminal, then take the weighted sum of
//! the predictions of every node on the path. Also the model file format.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{DataError, Dataset, LabelKind, NormalizationParams};
use crate::growth::{NodeRecord, TreeOfPredictors};
use crate::learners::AlgorithmSpec;
use crate::losses::{self, threshold, LossSpec};
use crate::weights::{self, PathWeights, WeightConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot access model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported model format version {found} (this build reads version {expected})")]
    Version { found: u64, expected: u32 },
    #[error("model file schema violation: {0}")]
    Schema(String),
    #[error("model checksum mismatch: file says {stored}, content hashes to {computed}")]
    Checksum { stored: String, computed: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    /// Seconds since the epoch; only set when the caller supplies a fixed
    /// timestamp, so repeated builds stay byte-identical.
    pub build_timestamp: Option<u64>,
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub label_name: String,
    pub label_kind: LabelKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverallPredictor {
    pub tree: TreeOfPredictors,
    pub weights: PathWeights,
    pub normalization: NormalizationParams,
    pub loss: LossSpec,
    pub algorithms: Vec<AlgorithmSpec>,
    pub metadata: Metadata,
}

impl OverallPredictor {
    /// Fits path weights on `v2` and assembles the predictor. `data` must
    /// already be normalized with `normalization`.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        tree: TreeOfPredictors,
        data: &Dataset,
        v2: &[usize],
        loss: LossSpec,
        algorithms: Vec<AlgorithmSpec>,
        normalization: NormalizationParams,
        weight_cfg: &WeightConfig,
        seed: u64,
    ) -> Self {
        let weights = weights::optimize_weights(&tree, data, v2, loss.kind, weight_cfg);
        let metadata = Metadata {
            seed,
            build_timestamp: None,
            format_version: FORMAT_VERSION,
            feature_names: data.specs().iter().map(|s| s.name.clone()).collect(),
            label_name: data.label_name().to_string(),
            label_kind: data.label_kind(),
        };
        let mut h = OverallPredictor {
            tree,
            weights,
            normalization,
            loss,
            algorithms,
            metadata,
        };
        h.fill_delta_t(data, v2);
        h
    }

    fn fill_delta_t(&mut self, data: &Dataset, v2: &[usize]) {
        let mut routed: Vec<Vec<usize>> = vec![Vec::new(); self.tree.nodes.len()];
        for &r in v2 {
            routed[self.tree.terminal_of(data.row(r))].push(r);
        }
        let root = &self.tree.nodes[self.tree.root].predictor;
        let kind = self.loss.kind;
        let deltas: Vec<Option<f64>> = self
            .weights
            .paths
            .iter()
            .map(|pw| {
                let rows = &routed[pw.terminal];
                if rows.is_empty() {
                    return None;
                }
                let labels = data.labels_of(rows);
                let before = root.score_rows(data, rows);
                let after: Vec<f64> = rows.iter().map(|&r| self.predict_normalized(data.row(r))).collect();
                let l0 = losses::node_loss(kind, &before, &labels).ok()?.0;
                let l1 = losses::node_loss(kind, &after, &labels).ok()?.0;
                Some(l0 - l1)
            })
            .collect();
        for (pw, d) in self.weights.paths.iter_mut().zip(deltas) {
            pw.delta_t = d;
        }
    }

    pub fn dim(&self) -> usize {
        self.normalization.dim()
    }

    /// `H(x)` for an already normalized `x`.
    pub fn predict_normalized(&self, x: &[f64]) -> f64 {
        let t = self.tree.terminal_of(x);
        let pw = self.weights.get(t).expect("every terminal has weights");
        pw.path
            .iter()
            .zip(&pw.weights)
            .map(|(&n, &w)| w * self.tree.nodes[n].predictor.score_row(x))
            .sum()
    }

    /// `H(x)` for a raw feature vector.
    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        let z = self.normalization.apply(x)?;
        Ok(self.predict_normalized(&z))
    }

    pub fn classify(&self, x: &[f64]) -> Result<u8, ModelError> {
        Ok(threshold(self.predict(x)?) as u8)
    }

    /// Terminal node id for a raw feature vector.
    pub fn terminal_of(&self, x: &[f64]) -> Result<usize, ModelError> {
        let z = self.normalization.apply(x)?;
        Ok(self.tree.terminal_of(&z))
    }

    fn to_file(&self) -> ModelPayload {
        ModelPayload {
            format_version: FORMAT_VERSION,
            loss: self.loss,
            normalization: self.normalization.clone(),
            algorithms: self.algorithms.clone(),
            nodes: self.tree.nodes.clone(),
            weights: self.weights.clone(),
            metadata: self.metadata.clone(),
        }
    }

    /// Serialized model document.
    pub fn to_json(&self) -> String {
        let payload = self.to_file();
        let checksum = checksum(&payload);
        let doc = ModelFile { payload, checksum };
        let mut s = serde_json::to_string_pretty(&doc).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(found) => {
                return Err(ModelError::Version {
                    found,
                    expected: FORMAT_VERSION,
                })
            }
            None => return Err(ModelError::Schema("missing format_version".into())),
        }
        let doc: ModelFile =
            serde_json::from_value(value).map_err(|e| ModelError::Schema(e.to_string()))?;
        let computed = checksum(&doc.payload);
        if computed != doc.checksum {
            return Err(ModelError::Checksum {
                stored: doc.checksum,
                computed,
            });
        }
        Self::from_payload(doc.payload)
    }

    fn from_payload(p: ModelPayload) -> Result<Self, ModelError> {
        let terminals: Vec<usize> = p
            .nodes
            .iter()
            .filter(|n| n.children.is_none())
            .map(|n| n.id)
            .collect();
        let tree = TreeOfPredictors {
            nodes: p.nodes,
            root: 0,
            terminals,
        };
        tree.validate().map_err(ModelError::Schema)?;
        let d = p.normalization.dim();
        if p.metadata.feature_names.len() != d {
            return Err(ModelError::Schema("feature names do not match normalization".into()));
        }
        for n in &tree.nodes {
            if n.predictor.dim != d || n.cell.bounds.len() != d {
                return Err(ModelError::Schema(format!("node {} has wrong dimension", n.id)));
            }
        }
        for &t in &tree.terminals {
            let pw = p
                .weights
                .get(t)
                .ok_or_else(|| ModelError::Schema(format!("terminal {t} has no weights")))?;
            if pw.path != tree.path_to(t) || pw.weights.len() != pw.path.len() {
                return Err(ModelError::Schema(format!("weights of terminal {t} do not match its path")));
            }
        }
        Ok(OverallPredictor {
            tree,
            weights: p.weights,
            normalization: p.normalization,
            loss: p.loss,
            algorithms: p.algorithms,
            metadata: p.metadata,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelPayload {
    format_version: u32,
    loss: LossSpec,
    normalization: NormalizationParams,
    algorithms: Vec<AlgorithmSpec>,
    nodes: Vec<NodeRecord>,
    weights: PathWeights,
    metadata: Metadata,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    #[serde(flatten)]
    payload: ModelPayload,
    checksum: String,
}

fn checksum(payload: &ModelPayload) -> String {
    let bytes = serde_json::to_vec(payload).expect("model serializes");
    format!("sha256:{}", hex::encode(Sha256::digest(&bytes)))
}

pub fn save_model(h: &OverallPredictor, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, h.to_json())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<OverallPredictor, ModelError> {
    OverallPredictor::from_json(&std::fs::read_to_string(path)?)
}
