//! Crate-wide error type. Variants map one-to-one onto the failure modes of
//! the pipeline stages; the CLI sorts them into config/data/internal exit
//! codes without inspecting message text.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // geometry
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid coordinate: lon={lon} lat={lat}")]
    InvalidCoordinate { lon: f64, lat: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    // ingestion
    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    ParseError { path: String, line: usize, column: usize, message: String },
    #[error("{path}: feature {index} is {found}, expected {expected}")]
    GeometryKindMismatch { path: String, index: usize, expected: String, found: String },
    #[error("{path}: layer contains no features")]
    EmptyLayer { path: String },
    #[error("{path}: missing header field {field}")]
    HeaderMissing { path: String, field: String },
    #[error("{path}: expected {expected} cell values, found {found}")]
    CountMismatch { path: String, expected: usize, found: usize },
    #[error("{path}: missing required column {column}")]
    MissingColumn { path: String, column: String },
    #[error("{path}: catalog binds no layer for role {role}")]
    MissingLayer { path: String, role: String },

    // spatial index
    #[error("k={k} exceeds the {available} hubs available")]
    KTooLarge { k: usize, available: usize },

    // sampling
    #[error("sampling exhausted: {0}")]
    SamplingExhausted(String),
    #[error("strategy {strategy} has {available} negatives, {needed} needed")]
    InsufficientNegatives { strategy: String, available: usize, needed: usize },

    // rasters & features
    #[error("grid too small: {rows}x{cols}, need at least 3x3")]
    GridTooSmall { rows: usize, cols: usize },
    #[error("point ({lon}, {lat}) outside raster extent")]
    OutOfExtent { lon: f64, lat: f64 },
    #[error("raster cell at ({lon}, {lat}) is nodata")]
    NoDataCell { lon: f64, lat: f64 },
    #[error("featurization failed for {} sample(s); first ids: {:?}", .ids.len(), .ids.iter().take(5).collect::<Vec<_>>())]
    FeaturizationFailed { ids: Vec<u64> },

    // graph
    #[error("graph needs more than {k} nodes, got {nodes}")]
    TooFewNodes { nodes: usize, k: usize },

    // models
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("non-finite value during {0}")]
    NonFinite(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("schema fingerprint mismatch: model {model}, data {data}")]
    SchemaMismatch { model: String, data: String },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("operation not supported for model kind {0}")]
    UnsupportedModelKind(String),

    // evaluation
    #[error("too few rows: {rows} rows for {cols} columns")]
    TooFewRows { rows: usize, cols: usize },
    #[error("column {0} is constant")]
    ConstantColumn(String),
    #[error("design matrix is rank-deficient at column {column}")]
    RankDeficient { column: usize },

    // risk map
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("risk map contains no points")]
    EmptyMap,

    #[error("{context}: {source}")]
    IoError { context: String, source: std::io::Error },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::IoError { context: context.into(), source }
    }
}
