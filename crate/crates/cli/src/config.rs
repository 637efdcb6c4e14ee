//! One JSON document drives every subcommand. Defaults cover the whole
//! pipeline, so an empty config file (or none at all) is a valid run.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use deskaid_core::riskmap::DEFAULT_THRESHOLDS;
use deskaid_core::{FeatureSet, MixSpec, ModelKind, TrainConfig, WorldConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed. Copied into `world.seed` and `model.train.seed` unless
    /// those are set explicitly.
    pub seed: u64,
    /// Layer catalog to read. `null` means `<out>/world/catalog.json`, the
    /// file the `synth` stage writes.
    pub catalog: Option<PathBuf>,
    pub world: WorldConfig,
    pub sampling: SamplingConfig,
    pub feature_set: FeatureSet,
    pub model: ModelConfig,
    /// Probability cutoff for the confusion matrix in `evaluate`.
    pub decision_threshold: f64,
    pub risk: RiskConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Negative mix: "random", "hybrid" or "hn<buffer_m>".
    pub mix: String,
    pub test_fraction: f64,
    /// Polygon GeoJSON; points inside become test, the rest train.
    /// Overrides `test_fraction` when set.
    pub region: Option<PathBuf>,
    /// Hard-negative candidates kept per hazard polygon and buffer.
    pub hard_per_polygon: usize,
    /// Random-negative pool size as a multiple of the positive count.
    pub random_pool_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// One of "logistic", "random_forest", "gradient_boosting", "fnn",
    /// "gcnn", "gcnn_weighted".
    pub kind: String,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    /// Band cut points, strictly increasing within (0, 1).
    pub thresholds: [f64; 4],
    /// Cell size of the prediction lattice painted over the border polygon.
    pub grid_spacing_m: f64,
    /// Provenance stamp embedded in the risk map. `null` resolves to the
    /// current UTC time at run start; pin it to make `riskmap` output
    /// byte-reproducible.
    pub stamp: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            catalog: None,
            world: WorldConfig::default(),
            sampling: SamplingConfig::default(),
            feature_set: FeatureSet::Expanded18,
            model: ModelConfig::default(),
            decision_threshold: 0.5,
            risk: RiskConfig::default(),
        }
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            mix: "random".to_string(),
            test_fraction: 0.25,
            region: None,
            hard_per_polygon: 4,
            random_pool_factor: 2.0,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { kind: "random_forest".to_string(), train: TrainConfig::default() }
    }
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig { thresholds: DEFAULT_THRESHOLDS, grid_spacing_m: 250.0, stamp: None }
    }
}

impl PipelineConfig {
    /// Loads the config file (all defaults when `path` is None), applies
    /// `--set` overrides, and propagates the master seed into subsections
    /// that did not pin their own.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig, CliError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::config(format!("config {}: {e}", p.display())))?
            }
            None => serde_json::Value::Object(Default::default()),
        };
        if !value.is_object() {
            return Err(CliError::config("config root must be a JSON object".to_string()));
        }
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        propagate_seed(&mut value);
        let cfg: PipelineConfig =
            serde_json::from_value(value).map_err(|e| CliError::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks beyond what deserialization enforces. Everything
    /// caught here is a usage error, reported before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.world.validate().map_err(|e| CliError::config(e.to_string()))?;
        MixSpec::from_str(&self.sampling.mix).map_err(|e| CliError::config(e.to_string()))?;
        ModelKind::from_str(&self.model.kind).map_err(|e| CliError::config(e.to_string()))?;
        self.model.train.validate().map_err(|e| CliError::config(e.to_string()))?;
        let f = self.sampling.test_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(CliError::config(format!("sampling.test_fraction must be in (0, 1), got {f}")));
        }
        if self.sampling.hard_per_polygon < 1 {
            return Err(CliError::config("sampling.hard_per_polygon must be >= 1".to_string()));
        }
        if !(self.sampling.random_pool_factor >= 1.0) {
            return Err(CliError::config(format!(
                "sampling.random_pool_factor must be >= 1, got {}",
                self.sampling.random_pool_factor
            )));
        }
        let t = &self.risk.thresholds;
        if !(t[0] > 0.0 && t[1] > t[0] && t[2] > t[1] && t[3] > t[2] && t[3] < 1.0) {
            return Err(CliError::config(format!(
                "risk.thresholds must be strictly increasing within (0, 1), got {t:?}"
            )));
        }
        if !(self.risk.grid_spacing_m > 0.0 && self.risk.grid_spacing_m.is_finite()) {
            return Err(CliError::config(format!(
                "risk.grid_spacing_m must be > 0, got {}",
                self.risk.grid_spacing_m
            )));
        }
        let d = self.decision_threshold;
        if !(d > 0.0 && d < 1.0) {
            return Err(CliError::config(format!("decision_threshold must be in (0, 1), got {d}")));
        }
        Ok(())
    }

    pub fn mix(&self) -> MixSpec {
        MixSpec::from_str(&self.sampling.mix).expect("validated mix")
    }

    pub fn model_kind(&self) -> ModelKind {
        ModelKind::from_str(&self.model.kind).expect("validated model kind")
    }

    /// Catalog path: explicit from the config, or the synth stage's output
    /// inside the run directory.
    pub fn catalog_path(&self, out: &Path) -> PathBuf {
        self.catalog.clone().unwrap_or_else(|| out.join("world").join("catalog.json"))
    }
}

/// Applies one `--set path.to.key=value` override onto the raw config
/// document. Values parse as JSON first so numbers, booleans, arrays and
/// null work; anything unparseable is taken as a bare string.
fn apply_override(root: &mut serde_json::Value, item: &str) -> Result<(), CliError> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set needs key=value, got {item:?}")))?;
    if path.is_empty() {
        return Err(CliError::config(format!("--set needs a non-empty key, got {item:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    for seg in &segments[..segments.len() - 1] {
        node = node
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("--set {path}: {seg} is not an object")))?
            .entry(seg.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    let leaf = segments[segments.len() - 1];
    node.as_object_mut()
        .ok_or_else(|| CliError::config(format!("--set {path}: parent of {leaf} is not an object")))?
        .insert(leaf.to_string(), value);
    Ok(())
}

/// The master seed feeds the world generator and the trainer unless the
/// config pins those seeds itself. An absent master seed behaves exactly
/// like writing the default out loud.
fn propagate_seed(root: &mut serde_json::Value) {
    if root.get("seed").is_none() {
        if let Some(obj) = root.as_object_mut() {
            obj.insert("seed".to_string(), serde_json::json!(PipelineConfig::default().seed));
        }
    }
    let Some(seed) = root.get("seed").cloned() else { return };
    for (section, inner) in [("world", None), ("model", Some("train"))] {
        let obj = root.as_object_mut().expect("checked object root");
        let entry = obj
            .entry(section.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
        let target = match inner {
            Some(key) => {
                let Some(entry) = entry.as_object_mut() else { continue };
                entry.entry(key.to_string()).or_insert_with(|| serde_json::Value::Object(Default::default()))
            }
            None => entry,
        };
        if let Some(target) = target.as_object_mut() {
            target.entry("seed".to_string()).or_insert_with(|| seed.clone());
        }
    }
}
