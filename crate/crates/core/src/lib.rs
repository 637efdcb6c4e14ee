//! Desk assessment of explosive-hazard risk from open geodata.
//!
//! The crate covers the full pipeline: layer ingestion (GeoJSON, ESRI ASCII
//! grid, event CSV), positive/negative sample generation around recorded
//! hazard polygons, distance/raster feature extraction, five classifiers
//! trained from scratch (logistic regression, random forest, gradient
//! boosting, a feed-forward net, and a graph-convolutional net over a 5-NN
//! location graph), evaluation diagnostics, banded risk-map export, and a
//! synthetic world generator used for end-to-end validation.
//!
//! Everything downstream of a seed is deterministic: samplers derive
//! per-polygon RNG streams, model training derives per-tree/per-init
//! streams, and writers emit canonical byte-stable artifacts regardless of
//! thread count.

pub mod error;
pub mod geo;
pub mod ingest;
pub mod index;
pub mod sampling;
pub mod features;
pub mod graph;
pub mod linalg;
pub mod models;
pub mod eval;
pub mod riskmap;
pub mod synth;

pub use error::Error;
pub use geo::{GeoPoint, LocalFrame, PointFeature, PolygonFeature, PolylineFeature};
pub use ingest::{GeometryKind, LayerBinding, LayerCatalog, RasterGrid, Role};
pub use sampling::{Label, MixSpec, SamplePoint, SampleSet, Strategy};
pub use features::{FeatureKind, FeatureSchema, FeatureSet, LabeledMatrix, PreparedLayers};
pub use graph::GeoGraph;
pub use models::{ModelKind, TrainConfig, TrainedModel};
pub use eval::EvalReport;
pub use riskmap::{RiskBand, RiskMap};
pub use synth::WorldConfig;

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Crate version, recorded in run logs by downstream tools.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Derives an independent RNG stream from a master seed, a stream tag and an
/// index. Streams are stable across platforms and thread counts, which is
/// what makes per-polygon / per-tree parallelism reproducible.
pub fn derive_rng(seed: u64, tag: &str, index: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut h = 0xcbf2_9ce4_8422_2325u64; // FNV-1a offset basis
    for &b in tag.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    for v in [seed, index] {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    rand_chacha::ChaCha8Rng::seed_from_u64(h)
}

/// FNV-1a over a byte string, rendered as fixed-width hex. Used for schema
/// fingerprints embedded in model files.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}
