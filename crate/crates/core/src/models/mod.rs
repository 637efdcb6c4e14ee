//! Five classifiers with one fit/predict-probability contract: logistic
//! regression, random forest, gradient-boosted trees, a feedforward net,
//! and a graph-convolutional net in unweighted and distance-weighted
//! variants. All are trained from scratch on a [`LabeledMatrix`] (the GCNN
//! on a [`GeoGraph`]) and serialize to self-describing JSON.
//!
//! Input encoding: tree models consume raw columns with categoricals as
//! ordinal indices; the linear and neural models z-score continuous
//! columns (training-row statistics) and one-hot the categoricals.
//!
//! Training is deterministic: identical (data, config, seed) produce
//! bit-identical model files at any thread count.

mod boosting;
mod gcnn;
mod logistic;
mod nn;
mod tree;

mod forest;

pub use boosting::train_gradient_boosting;
pub use forest::train_random_forest;
pub use gcnn::gradient_check as gcnn_gradient_check;
pub use gcnn::train_gcnn;
pub use logistic::train_logistic;
pub use nn::gradient_check as fnn_gradient_check;
pub use nn::train_fnn;
pub use tree::{Tree, TreeNode};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::features::{FeatureKind, FeatureSchema, LabeledMatrix};
use crate::graph::{build_knn_graph, GeoGraph};
use crate::Result;

// ── Kinds and configuration ─────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    RandomForest,
    GradientBoosting,
    Fnn,
    Gcnn,
    GcnnWeighted,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Logistic,
        ModelKind::RandomForest,
        ModelKind::GradientBoosting,
        ModelKind::Fnn,
        ModelKind::Gcnn,
        ModelKind::GcnnWeighted,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Logistic => "logistic",
            ModelKind::RandomForest => "random_forest",
            ModelKind::GradientBoosting => "gradient_boosting",
            ModelKind::Fnn => "fnn",
            ModelKind::Gcnn => "gcnn",
            ModelKind::GcnnWeighted => "gcnn_weighted",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnsupportedModelKind(s.to_string()))
    }
}

/// Hyperparameters for every model family, all config-overridable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Logistic regression: gradient-descent iteration cap and the
    /// gradient-norm stopping tolerance.
    pub lr_max_iters: usize,
    pub lr_tolerance: f64,
    pub rf_trees: usize,
    /// Candidate features per split; None means ceil(sqrt(p)).
    pub rf_mtry: Option<usize>,
    pub rf_bootstrap: bool,
    pub rf_min_leaf: usize,
    /// Depth cap per tree; None grows to purity.
    pub rf_max_depth: Option<usize>,
    pub gbt_rounds: usize,
    pub gbt_depth: usize,
    pub gbt_learning_rate: f64,
    pub nn_hidden: (usize, usize),
    pub nn_learning_rate: f64,
    pub nn_weight_decay: f64,
    pub nn_batch: usize,
    pub nn_max_epochs: usize,
    pub nn_patience: usize,
    pub nn_val_fraction: f64,
    pub gcnn_width: usize,
    /// Step size for the graph model. Full-batch training takes one
    /// optimizer step per epoch, so it wants a larger step than the
    /// mini-batch networks.
    pub gcnn_learning_rate: f64,
    /// Neighbors per node when a GCNN has to build its own graph.
    pub knn_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            lr_max_iters: 1000,
            lr_tolerance: 1e-8,
            rf_trees: 200,
            rf_mtry: None,
            rf_bootstrap: true,
            rf_min_leaf: 1,
            rf_max_depth: None,
            gbt_rounds: 200,
            gbt_depth: 3,
            gbt_learning_rate: 0.1,
            nn_hidden: (64, 32),
            nn_learning_rate: 1e-3,
            nn_weight_decay: 0.01,
            nn_batch: 128,
            nn_max_epochs: 500,
            nn_patience: 50,
            nn_val_fraction: 0.15,
            gcnn_width: 64,
            gcnn_learning_rate: 1e-2,
            knn_k: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.lr_max_iters == 0 || self.rf_trees == 0 {
            return bad("iteration and tree counts must be >= 1");
        }
        if !(self.lr_tolerance > 0.0) {
            return bad("lr_tolerance must be > 0");
        }
        if self.rf_min_leaf == 0 {
            return bad("rf_min_leaf must be >= 1");
        }
        if !(self.gbt_learning_rate > 0.0)
            || !(self.nn_learning_rate > 0.0)
            || !(self.gcnn_learning_rate > 0.0)
        {
            return bad("learning rates must be > 0");
        }
        if self.gbt_depth == 0 {
            return bad("gbt_depth must be >= 1");
        }
        if self.nn_patience == 0 {
            return bad("nn_patience must be >= 1");
        }
        if self.nn_batch == 0 || self.nn_max_epochs == 0 {
            return bad("nn_batch and nn_max_epochs must be >= 1");
        }
        if !(self.nn_val_fraction > 0.0 && self.nn_val_fraction < 1.0) {
            return bad("nn_val_fraction must be in (0, 1)");
        }
        if self.nn_hidden.0 == 0 || self.nn_hidden.1 == 0 || self.gcnn_width == 0 {
            return bad("layer widths must be >= 1");
        }
        if self.nn_weight_decay < 0.0 {
            return bad("nn_weight_decay must be >= 0");
        }
        if self.knn_k == 0 {
            return bad("knn_k must be >= 1");
        }
        Ok(())
    }
}

// ── Input encoding ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnEncoding {
    Standardize { mean: f64, std: f64 },
    OneHot { size: usize },
}

/// Maps raw schema columns to model inputs: z-scores for continuous
/// columns (constant columns encode to 0), one-hot for categoricals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub columns: Vec<ColumnEncoding>,
    pub width: usize,
}

impl Encoder {
    pub fn fit(matrix: &LabeledMatrix) -> Encoder {
        let columns: Vec<ColumnEncoding> = matrix
            .schema
            .features
            .iter()
            .enumerate()
            .map(|(j, f)| match f.kind {
                FeatureKind::Continuous => {
                    ColumnEncoding::Standardize { mean: matrix.means[j], std: matrix.stds[j] }
                }
                FeatureKind::Categorical => ColumnEncoding::OneHot {
                    size: f.vocabulary.as_ref().map_or(1, Vec::len),
                },
            })
            .collect();
        let width = columns
            .iter()
            .map(|c| match c {
                ColumnEncoding::Standardize { .. } => 1,
                ColumnEncoding::OneHot { size } => *size,
            })
            .sum();
        Encoder { columns, width }
    }

    pub fn encode_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width);
        for (c, v) in self.columns.iter().zip(row) {
            match c {
                ColumnEncoding::Standardize { mean, std } => {
                    out.push(if *std > 1e-12 { (v - mean) / std } else { 0.0 });
                }
                ColumnEncoding::OneHot { size } => {
                    let mut idx = *v as usize;
                    if idx >= *size {
                        idx = 0;
                    }
                    let start = out.len();
                    out.resize(start + size, 0.0);
                    out[start + idx] = 1.0;
                }
            }
        }
        out
    }

    pub fn encode_rows(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.encode_row(r)).collect()
    }
}

// ── Trained model ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Row-major weights, one row per output unit.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelParams {
    Logistic {
        weights: Vec<f64>,
        bias: f64,
    },
    Forest {
        trees: Vec<Tree>,
        /// Normalized mean decrease in impurity per schema column.
        importances: Vec<f64>,
    },
    Boosting {
        init_score: f64,
        learning_rate: f64,
        trees: Vec<Tree>,
    },
    Mlp {
        layers: Vec<DenseLayer>,
    },
    Gcnn {
        pre: DenseLayer,
        conv: Vec<DenseLayer>,
        post: Vec<DenseLayer>,
        weighted: bool,
        /// Median non-self edge distance of the training graph; scales
        /// edge weights at prediction time.
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub schema_fingerprint: String,
    pub config: TrainConfig,
    pub encoder: Encoder,
    pub params: ModelParams,
}

pub(crate) fn schema_fingerprint(schema: &FeatureSchema) -> String {
    let json = serde_json::to_string(schema).expect("schema serializes");
    crate::fnv1a_hex(json.as_bytes())
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy of a logit against a 0/1 label.
pub(crate) fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Both classes present among the flagged training rows, or error.
pub(crate) fn check_two_classes(labels: &[u8], mask: &[bool]) -> Result<()> {
    let mut seen = [false; 2];
    for (y, m) in labels.iter().zip(mask) {
        if *m {
            seen[*y as usize] = true;
        }
    }
    if seen[0] && seen[1] {
        Ok(())
    } else {
        Err(Error::SingleClassData)
    }
}

pub(crate) fn train_rows_of(matrix: &LabeledMatrix) -> Vec<usize> {
    (0..matrix.n_rows()).filter(|i| matrix.is_train[*i]).collect()
}

impl TrainedModel {
    fn check_fingerprint(&self, schema: &FeatureSchema) -> Result<()> {
        let data = schema_fingerprint(schema);
        if data != self.schema_fingerprint {
            return Err(Error::SchemaMismatch {
                model: format!("{} ({})", self.kind, self.schema_fingerprint),
                data,
            });
        }
        Ok(())
    }

    fn predict_encoded_row(&self, encoded: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Logistic { weights, bias } => {
                let z: f64 = weights.iter().zip(encoded).map(|(w, x)| w * x).sum::<f64>() + bias;
                sigmoid(z)
            }
            ModelParams::Mlp { layers } => nn::forward_mlp(layers, encoded),
            _ => unreachable!("tree and graph models do not use encoded rows"),
        }
    }

    fn predict_raw_row(&self, raw: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Forest { trees, .. } => {
                let sum: f64 = trees.iter().map(|t| t.predict(raw)).sum();
                sum / trees.len() as f64
            }
            ModelParams::Boosting { init_score, learning_rate, trees } => {
                let score: f64 =
                    init_score + learning_rate * trees.iter().map(|t| t.predict(raw)).sum::<f64>();
                sigmoid(score)
            }
            _ => unreachable!("only tree models predict raw rows"),
        }
    }

    fn predict_rows(&self, schema: &FeatureSchema, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_fingerprint(schema)?;
        let probs = match &self.params {
            ModelParams::Forest { .. } | ModelParams::Boosting { .. } => {
                rows.iter().map(|r| self.predict_raw_row(r)).collect()
            }
            ModelParams::Logistic { .. } | ModelParams::Mlp { .. } => {
                rows.iter().map(|r| self.predict_encoded_row(&self.encoder.encode_row(r))).collect()
            }
            ModelParams::Gcnn { .. } => unreachable!("graph prediction handled separately"),
        };
        Ok(probs)
    }

    /// One probability per matrix row, in row order. Graph models build a
    /// k-NN graph over the matrix locations first.
    pub fn predict_matrix(&self, matrix: &LabeledMatrix) -> Result<Vec<f64>> {
        match &self.params {
            ModelParams::Gcnn { .. } => {
                let graph = build_knn_graph(matrix, self.config.knn_k)?;
                self.predict_graph(&graph)
            }
            _ => self.predict_rows(&matrix.schema, &matrix.rows),
        }
    }

    /// One probability per node. Non-graph models ignore the edges.
    pub fn predict_graph(&self, graph: &GeoGraph) -> Result<Vec<f64>> {
        match &self.params {
            ModelParams::Gcnn { .. } => {
                self.check_fingerprint(&graph.schema)?;
                Ok(gcnn::forward_full(self, graph))
            }
            _ => self.predict_rows(&graph.schema, &graph.node_features),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::ParseError {
            path: path.display().to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

/// Trains any model kind from a matrix; graph kinds build their k-NN
/// graph from the matrix locations first.
pub fn train_on_matrix(kind: ModelKind, matrix: &LabeledMatrix, cfg: &TrainConfig) -> Result<TrainedModel> {
    match kind {
        ModelKind::Logistic => train_logistic(matrix, cfg),
        ModelKind::RandomForest => train_random_forest(matrix, cfg),
        ModelKind::GradientBoosting => train_gradient_boosting(matrix, cfg),
        ModelKind::Fnn => train_fnn(matrix, cfg),
        ModelKind::Gcnn | ModelKind::GcnnWeighted => {
            let graph = build_knn_graph(matrix, cfg.knn_k)?;
            train_gcnn(&graph, cfg, kind == ModelKind::GcnnWeighted)
        }
    }
}

// ── Tests ───────────────────────────────────────────────────────────────
