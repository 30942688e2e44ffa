//! Tabular data: CSV ingestion, min-max normalization, the S / V¹ / V²
//! partition and restriction of row sets to axis-aligned cells.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound of every root interval. Normalized values never exceed 1.0,
/// so a half-open `[0, 1 + ε)` interval still contains them.
pub const ROOT_UPPER: f64 = 1.0 + 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing value at row {row}, column '{column}' (impute before loading)")]
    MissingValue { row: usize, column: String },
    #[error("non-numeric value '{value}' at row {row}, column '{column}'")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("binary column '{column}' has value {value} at row {row}; expected 0 or 1")]
    NotBinary {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("column '{0}' not found in header")]
    UnknownColumn(String),
    #[error("dataset has no rows")]
    Empty,
    #[error("dataset has no feature columns")]
    NoFeatures,
    #[error("row has {got} features, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid partition ratios {0:?}: must be nonnegative and sum to 1")]
    BadRatios((f64, f64, f64)),
    #[error("partition of {n} rows leaves the {part} part empty")]
    EmptyPart { n: usize, part: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub index: usize,
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Binary,
    Real,
}

impl LabelKind {
    pub fn infer(labels: &[f64]) -> Self {
        if labels.iter().all(|&y| y == 0.0 || y == 1.0) {
            LabelKind::Binary
        } else {
            LabelKind::Real
        }
    }
}

/// Row-major feature matrix with labels and per-feature metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    specs: Vec<FeatureSpec>,
    label_name: String,
    label_kind: LabelKind,
}

impl Dataset {
    /// Builds a dataset from rows. The label kind is inferred from the labels.
    pub fn new(
        rows: Vec<Vec<f64>>,
        labels: Vec<f64>,
        specs: Vec<FeatureSpec>,
    ) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        if specs.is_empty() {
            return Err(DataError::NoFeatures);
        }
        let d = specs.len();
        let mut features = Vec::with_capacity(rows.len() * d);
        for row in &rows {
            if row.len() != d {
                return Err(DataError::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            features.extend_from_slice(row);
        }
        if labels.len() != rows.len() {
            return Err(DataError::DimensionMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        let label_kind = LabelKind::infer(&labels);
        Ok(Self {
            features,
            labels,
            specs,
            label_name: "label".to_string(),
            label_kind,
        })
    }

    /// Convenience constructor: every feature continuous, named `x0..`.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self, DataError> {
        let d = rows.first().map_or(0, Vec::len);
        let specs = (0..d)
            .map(|i| FeatureSpec {
                index: i,
                name: format!("x{i}"),
                kind: FeatureKind::Continuous,
            })
            .collect();
        Self::new(rows, labels, specs)
    }

    pub fn with_label_name(mut self, name: impl Into<String>) -> Self {
        self.label_name = name.into();
        self
    }

    pub fn with_label_kind(mut self, kind: LabelKind) -> Self {
        self.label_kind = kind;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.specs.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.specs.len();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.specs.len() + feature]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn label_kind(&self) -> LabelKind {
        self.label_kind
    }

    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).collect()
    }

    /// Labels of the given rows, in order.
    pub fn labels_of(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.labels[i]).collect()
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.n_features());
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        Dataset {
            features,
            labels: self.labels_of(rows),
            specs: self.specs.clone(),
            label_name: self.label_name.clone(),
            label_kind: self.label_kind,
        }
    }

    /// Drops the named feature column, reindexing the remaining specs.
    pub fn drop_feature(&self, name: &str) -> Result<Dataset, DataError> {
        let drop = self
            .specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))?;
        if self.n_features() == 1 {
            return Err(DataError::NoFeatures);
        }
        let mut features = Vec::with_capacity(self.n_rows() * (self.n_features() - 1));
        for r in 0..self.n_rows() {
            for (j, &v) in self.row(r).iter().enumerate() {
                if j != drop {
                    features.push(v);
                }
            }
        }
        let specs = self
            .specs
            .iter()
            .filter(|s| s.index != drop)
            .enumerate()
            .map(|(i, s)| FeatureSpec {
                index: i,
                name: s.name.clone(),
                kind: s.kind,
            })
            .collect();
        Ok(Dataset {
            features,
            labels: self.labels.clone(),
            specs,
            label_name: self.label_name.clone(),
            label_kind: self.label_kind,
        })
    }
}

/// Reads a CSV with a header row. `binary_columns` are validated to hold only
/// 0/1; every other non-label column is continuous.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    binary_columns: &BTreeSet<String>,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, label_column, binary_columns)
}

fn parse_cell(record: &csv::StringRecord, pos: usize, row_no: usize, header: &[String]) -> Result<f64, DataError> {
    let raw = record.get(pos).unwrap_or("").trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
        return Err(DataError::MissingValue {
            row: row_no,
            column: header[pos].clone(),
        });
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DataError::NonNumeric {
            row: row_no,
            column: header[pos].clone(),
            value: raw.to_string(),
        }),
    }
}

/// Reads the named columns of a headed CSV in the given order, ignoring any
/// other column. Used to score unlabeled rows with a saved model.
pub fn read_feature_rows<R: std::io::Read>(reader: R, names: &[String]) -> Result<Vec<Vec<f64>>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let positions = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| DataError::UnknownColumn(n.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        rows.push(
            positions
                .iter()
                .map(|&pos| parse_cell(&record, pos, i + 1, &header))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    Ok(rows)
}

pub fn load_feature_rows(path: impl AsRef<Path>, names: &[String]) -> Result<Vec<Vec<f64>>, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_feature_rows(file, names)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    label_column: &str,
    binary_columns: &BTreeSet<String>,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_pos = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::UnknownColumn(label_column.to_string()))?;
    for b in binary_columns {
        if !header.contains(b) {
            return Err(DataError::UnknownColumn(b.clone()));
        }
    }

    let mut specs = Vec::new();
    let mut columns = Vec::new();
    for (pos, name) in header.iter().enumerate() {
        if pos == label_pos {
            continue;
        }
        let kind = if binary_columns.contains(name) {
            FeatureKind::Binary
        } else {
            FeatureKind::Continuous
        };
        specs.push(FeatureSpec {
            index: specs.len(),
            name: name.clone(),
            kind,
        });
        columns.push(pos);
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        // 1-based data row number (header excluded)
        let row_no = i + 1;
        let parse = |pos: usize| parse_cell(&record, pos, row_no, &header);
        let mut row = Vec::with_capacity(columns.len());
        for (spec, &pos) in specs.iter().zip(&columns) {
            let v = parse(pos)?;
            if spec.kind == FeatureKind::Binary && v != 0.0 && v != 1.0 {
                return Err(DataError::NotBinary {
                    row: row_no,
                    column: spec.name.clone(),
                    value: v,
                });
            }
            row.push(v);
        }
        labels.push(parse(label_pos)?);
        rows.push(row);
    }
    Ok(Dataset::new(rows, labels, specs)?.with_label_name(label_column))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureScale {
    Binary,
    Continuous { min: f64, max: f64 },
}

impl FeatureScale {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            FeatureScale::Binary => x,
            FeatureScale::Continuous { min, max } => {
                if max > min {
                    ((x - min) / (max - min)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per-feature min/max observed on the rows normalization was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub features: Vec<FeatureScale>,
}

impl NormalizationParams {
    pub fn identity(specs: &[FeatureSpec]) -> Self {
        let features = specs
            .iter()
            .map(|s| match s.kind {
                FeatureKind::Binary => FeatureScale::Binary,
                FeatureKind::Continuous => FeatureScale::Continuous { min: 0.0, max: 1.0 },
            })
            .collect();
        Self { features }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, DataError> {
        if x.len() != self.features.len() {
            return Err(DataError::DimensionMismatch {
                expected: self.features.len(),
                got: x.len(),
            });
        }
        Ok(self
            .features
            .iter()
            .zip(x)
            .map(|(s, &v)| s.apply(v))
            .collect())
    }

    /// Normalizes every row of `data` with these parameters.
    pub fn transform(&self, data: &Dataset) -> Result<Dataset, DataError> {
        if data.n_features() != self.dim() {
            return Err(DataError::DimensionMismatch {
                expected: self.dim(),
                got: data.n_features(),
            });
        }
        let d = self.dim();
        let features = data
            .features
            .iter()
            .enumerate()
            .map(|(k, &v)| self.features[k % d].apply(v))
            .collect();
        Ok(Dataset {
            features,
            ..data.clone()
        })
    }
}

/// Fits min-max parameters on `fit_on` rows and applies them to every row.
/// Constant continuous features map to zero; out-of-range values clamp.
pub fn normalize(data: &Dataset, fit_on: &[usize]) -> (Dataset, NormalizationParams) {
    assert!(!fit_on.is_empty(), "normalize: fit_on must be non-empty");
    let features = data
        .specs
        .iter()
        .map(|s| match s.kind {
            FeatureKind::Binary => FeatureScale::Binary,
            FeatureKind::Continuous => {
                let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
                for &r in fit_on {
                    let v = data.value(r, s.index);
                    min = min.min(v);
                    max = max.max(v);
                }
                FeatureScale::Continuous { min, max }
            }
        })
        .collect();
    let params = NormalizationParams { features };
    let normalized = params
        .transform(data)
        .expect("params fitted on the same dataset");
    (normalized, params)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub s_idx: Vec<usize>,
    pub v1_idx: Vec<usize>,
    pub v2_idx: Vec<usize>,
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.75, 0.15, 0.10);

/// Shuffles `rows` with the seed and cuts it into S / V¹ / V².
pub fn split_rows(
    rows: &[usize],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Partition, DataError> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios(ratios));
    }
    let n = rows.len();
    let mut shuffled = rows.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let cut = |frac: f64| ((frac * n as f64) + 1e-9).floor().min(n as f64) as usize;
    let mut sizes = [cut(a), 0, 0];
    sizes[1] = cut(a + b).max(sizes[0]) - sizes[0];
    sizes[2] = n - sizes[0] - sizes[1];
    // small samples: a part with a positive ratio borrows a row from the
    // largest part so that every N ≥ 3 yields three non-empty parts
    for k in 0..3 {
        if sizes[k] == 0 && [a, b, c][k] > 0.0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], usize::MAX - j)).unwrap();
            if sizes[donor] >= 2 {
                sizes[donor] -= 1;
                sizes[k] = 1;
            }
        }
    }
    let first = sizes[0];
    let second = first + sizes[1];
    let part = Partition {
        s_idx: shuffled[..first].to_vec(),
        v1_idx: shuffled[first..second].to_vec(),
        v2_idx: shuffled[second..].to_vec(),
    };
    for (name, len) in [
        ("S", part.s_idx.len()),
        ("V1", part.v1_idx.len()),
        ("V2", part.v2_idx.len()),
    ] {
        if len == 0 {
            return Err(DataError::EmptyPart { n, part: name });
        }
    }
    Ok(part)
}

pub fn split_partition(
    data: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Partition, DataError> {
    split_rows(&data.all_rows(), ratios, seed)
}

/// Axis-aligned region: per feature a half-open interval `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub bounds: Vec<(f64, f64)>,
}

impl Cell {
    pub fn root(d: usize) -> Self {
        Self {
            bounds: vec![(0.0, ROOT_UPPER); d],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.bounds
            .iter()
            .zip(x)
            .all(|(&(lo, hi), &v)| lo <= v && v < hi)
    }

    /// `(C⁻, C⁺)` for `x_feature < tau` and `x_feature >= tau`.
    pub fn split(&self, feature: usize, tau: f64) -> (Cell, Cell) {
        let (lo, hi) = self.bounds[feature];
        let mut left = self.clone();
        let mut right = self.clone();
        left.bounds[feature] = (lo, tau.min(hi));
        right.bounds[feature] = (tau.max(lo), hi);
        (left, right)
    }

    pub fn is_subset_of(&self, other: &Cell) -> bool {
        self.bounds
            .iter()
            .zip(&other.bounds)
            .all(|(&(lo, hi), &(olo, ohi))| lo >= olo && hi <= ohi)
    }
}

/// Rows of `rows` whose feature vectors lie in `cell`, order preserved.
pub fn restrict(rows: &[usize], data: &Dataset, cell: &Cell) -> Vec<usize> {
    rows.iter()
        .copied()
        .filter(|&r| cell.contains(data.row(r)))
        .collect()
}
