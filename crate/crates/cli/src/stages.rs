//! The eight pipeline stages. Each reads artifacts from the fixed run
//! directory layout, writes its own, and records a run log. Stages are
//! deterministic given the resolved config, so rerunning one with
//! `--force` reproduces its outputs byte for byte.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use deskaid_core::eval::{classification_report, correlation_matrix, feature_importance, roc_auc, vif};
use deskaid_core::features::{build_matrix, prepare_layers, PreparedLayers};
use deskaid_core::ingest::parse_geojson_layer;
use deskaid_core::models::train_on_matrix;
use deskaid_core::riskmap::export_risk_geojson;
use deskaid_core::sampling::{
    assemble_training_set, sample_evaluation_grid, sample_hard_negatives, sample_positives,
    sample_random_negatives, split_by_region, split_train_test, NegativePools,
};
use deskaid_core::{
    FeatureSchema, GeometryKind, LabeledMatrix, LayerCatalog, MixSpec, ModelKind, PolygonFeature, RiskMap,
    Role, SampleSet, TrainedModel,
};

use crate::config::PipelineConfig;
use crate::runlog::{utc_now, RunRecorder};
use crate::CliError;

/// Everything a stage needs: the resolved config, the run directory, and
/// whether existing outputs may be replaced.
pub struct Ctx {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub force: bool,
}

impl Ctx {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Refuses to clobber existing outputs unless `--force` was given.
    fn claim_outputs(&self, paths: &[&Path]) -> Result<(), CliError> {
        if !self.force {
            for p in paths {
                if p.exists() {
                    return Err(CliError::config(format!(
                        "output {} already exists; pass --force to overwrite",
                        p.display()
                    )));
                }
            }
        }
        for p in paths {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)
                    .map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
            }
        }
        Ok(())
    }

    /// Stage inputs must exist before any work starts; a missing one is a
    /// validation error that names the offending path.
    fn require_input(&self, path: &Path, hint: &str) -> Result<(), CliError> {
        if !path.exists() {
            return Err(CliError::config(format!("missing {hint}: {}", path.display())));
        }
        Ok(())
    }

    fn catalog(&self, rec: &mut RunRecorder) -> Result<LayerCatalog, CliError> {
        let path = self.cfg.catalog_path(&self.out);
        self.require_input(&path, "layer catalog (run `deskaid synth` first, or set `catalog`)")?;
        rec.input(&path);
        let catalog = LayerCatalog::load(&path)?;
        catalog.validate_paths().map_err(|e| CliError::config(e.to_string()))?;
        Ok(catalog)
    }
}

fn load_polygons(catalog: &LayerCatalog, role: Role) -> Result<Vec<PolygonFeature>, CliError> {
    let path = catalog.path_for(role)?;
    Ok(parse_geojson_layer(&path, GeometryKind::Polygon)?.into_polygons())
}

fn border_polygon(catalog: &LayerCatalog) -> Result<PolygonFeature, CliError> {
    let mut borders = load_polygons(catalog, Role::Border)?;
    if borders.len() != 1 {
        return Err(CliError::data(format!(
            "border layer must hold exactly one polygon, found {}",
            borders.len()
        )));
    }
    Ok(borders.remove(0))
}

// ── Stages ──────────────────────────────────────────────────────────────

/// Generates the synthetic world under `<out>/world/`.
pub fn synth(ctx: &Ctx) -> Result<(), CliError> {
    let world_dir = ctx.path("world");
    let catalog_path = world_dir.join("catalog.json");
    ctx.claim_outputs(&[&world_dir])?;
    let mut rec = RunRecorder::start(&ctx.out);

    let catalog = deskaid_core::synth::generate_world(&ctx.cfg.world, &world_dir)?;
    for role in Role::ALL {
        if let Ok(p) = catalog.path_for(role) {
            rec.output(&p);
        }
    }
    rec.output(&catalog_path);
    rec.output(&world_dir.join("manifest.json"));
    rec.finish("synth", &ctx.cfg)
}

/// Draws positives and negative pools from the catalog's hazard and border
/// layers, assembles a balanced set per the configured mix, and splits it
/// into train and test CSVs.
pub fn sample(ctx: &Ctx) -> Result<(), CliError> {
    let train_path = ctx.path("samples/train.csv");
    let test_path = ctx.path("samples/test.csv");
    ctx.claim_outputs(&[&train_path, &test_path])?;
    let mut rec = RunRecorder::start(&ctx.out);

    let catalog = ctx.catalog(&mut rec)?;
    let border = border_polygon(&catalog)?;
    let hazards = load_polygons(&catalog, Role::Hazard)?;
    let seed = ctx.cfg.seed;

    let positives = sample_positives(&hazards, seed)?;
    let mix = ctx.cfg.mix();
    let mut pools = NegativePools::default();
    let buffers: Vec<u32> = match mix {
        MixSpec::Random => vec![],
        MixSpec::HardNegative(b) => vec![b],
        MixSpec::Hybrid => vec![50, 500, 5000],
    };
    if matches!(mix, MixSpec::Random | MixSpec::Hybrid) {
        let factor = ctx.cfg.sampling.random_pool_factor;
        let n = ((positives.len() as f64) * factor).ceil() as usize;
        pools.random = sample_random_negatives(&border, &hazards, n, seed)?;
    }
    for &b in &buffers {
        let per_poly = ctx.cfg.sampling.hard_per_polygon;
        pools.hard.insert(b, sample_hard_negatives(&hazards, b as f64, per_poly, seed)?);
    }

    let set = assemble_training_set(&positives, &pools, mix, seed)?;
    let (train, test) = match &ctx.cfg.sampling.region {
        Some(region_path) => {
            ctx.require_input(region_path, "sampling.region polygon")?;
            rec.input(region_path);
            let mut regions = parse_geojson_layer(region_path, GeometryKind::Polygon)?.into_polygons();
            if regions.len() != 1 {
                return Err(CliError::config(format!(
                    "sampling.region must hold exactly one polygon, found {} in {}",
                    regions.len(),
                    region_path.display()
                )));
            }
            split_by_region(&set, &regions.remove(0))
        }
        None => split_train_test(&set, ctx.cfg.sampling.test_fraction, seed)?,
    };
    if train.is_empty() || test.is_empty() {
        return Err(CliError::data(format!(
            "split produced {} train and {} test points",
            train.len(),
            test.len()
        )));
    }

    train.write_csv(&train_path)?;
    test.write_csv(&test_path)?;
    rec.output(&train_path);
    rec.output(&test_path);
    rec.finish("sample", &ctx.cfg)
}

/// Featurizes train and test samples into one matrix CSV plus its schema
/// sidecar. Train rows are flagged so scaling statistics come from them
/// alone.
pub fn featurize(ctx: &Ctx) -> Result<(), CliError> {
    let matrix_path = ctx.path("features/matrix.csv");
    let sidecar_path = ctx.path("features/matrix.schema.json");
    ctx.claim_outputs(&[&matrix_path, &sidecar_path])?;
    let mut rec = RunRecorder::start(&ctx.out);

    let catalog = ctx.catalog(&mut rec)?;
    let train_path = ctx.path("samples/train.csv");
    let test_path = ctx.path("samples/test.csv");
    ctx.require_input(&train_path, "training samples (run `deskaid sample` first)")?;
    ctx.require_input(&test_path, "test samples (run `deskaid sample` first)")?;
    rec.input(&train_path);
    rec.input(&test_path);

    let train = SampleSet::read_csv(&train_path, ctx.cfg.seed)?;
    let test = SampleSet::read_csv(&test_path, ctx.cfg.seed)?;
    let train_ids: BTreeSet<u64> = train.points.iter().map(|p| p.id).collect();
    let mut points = train.points;
    points.extend(test.points);
    let combined = SampleSet::from_points(points, ctx.cfg.seed);

    let layers = prepare_layers(&catalog)?;
    let schema = FeatureSchema::new(ctx.cfg.feature_set, &layers);
    let matrix = build_matrix(&combined, &layers, &schema, &train_ids)?;
    matrix.write_csv(&matrix_path)?;
    rec.output(&matrix_path);
    rec.output(&sidecar_path);
    rec.finish("featurize", &ctx.cfg)
}

fn load_matrix(ctx: &Ctx, rec: &mut RunRecorder) -> Result<LabeledMatrix, CliError> {
    let path = ctx.path("features/matrix.csv");
    ctx.require_input(&path, "feature matrix (run `deskaid featurize` first)")?;
    rec.input(&path);
    rec.input(&ctx.path("features/matrix.schema.json"));
    Ok(LabeledMatrix::read_csv(&path)?)
}

fn load_model(ctx: &Ctx, rec: &mut RunRecorder) -> Result<TrainedModel, CliError> {
    let path = ctx.path("models/model.json");
    ctx.require_input(&path, "trained model (run `deskaid train` first)")?;
    rec.input(&path);
    Ok(TrainedModel::load(&path)?)
}

/// Fits the configured model on the matrix's training rows.
pub fn train(ctx: &Ctx) -> Result<(), CliError> {
    let model_path = ctx.path("models/model.json");
    ctx.claim_outputs(&[&model_path])?;
    let mut rec = RunRecorder::start(&ctx.out);

    let matrix = load_matrix(ctx, &mut rec)?;
    let model = train_on_matrix(ctx.cfg.model_kind(), &matrix, &ctx.cfg.model.train)?;
    model.save(&model_path)?;
    rec.output(&model_path);
    rec.finish("train", &ctx.cfg)
}

/// Scores the held-out rows: classification report plus ROC curve.
pub fn evaluate(ctx: &Ctx) -> Result<(), CliError> {
    let report_path = ctx.path("eval/report.json");
    let roc_path = ctx.path("eval/roc.csv");
    ctx.claim_outputs(&[&report_path, &roc_path])?;
    let mut rec = RunRecorder::start(&ctx.out);

    let matrix = load_matrix(ctx, &mut rec)?;
    let model = load_model(ctx, &mut rec)?;
    let probs = model.predict_matrix(&matrix)?;
    let mut labels = Vec::new();
    let mut test_probs = Vec::new();
    for i in 0..matrix.n_rows() {
        if !matrix.is_train[i] {
            labels.push(matrix.labels[i]);
            test_probs.push(probs[i]);
        }
    }
    let mut report = classification_report(&labels, &test_probs, ctx.cfg.decision_threshold)?;
    let (points, auc) = roc_auc(&labels, &test_probs)?;
    report.roc_points = points;
    report.auc = Some(auc);
    report.save(&report_path)?;
    report.write_roc_csv(&roc_path)?;
    rec.output(&report_path);
    rec.output(&roc_path);
    rec.finish("evaluate", &ctx.cfg)
}

/// Writes per-sample probabilities for every row of the matrix.
pub fn predict(ctx: &Ctx) -> Result<(), CliError> {
    let pred_path = ctx.path("predictions/predictions.csv");
    ctx.claim_outputs(&[&pred_path])?;
    let mut rec = RunRecorder::start(&ctx.out);

    let matrix = load_matrix(ctx, &mut rec)?;
    let model = load_model(ctx, &mut rec)?;
    let probs = model.predict_matrix(&matrix)?;

    let mut body = String::from("id,lon,lat,label,is_train,probability\n");
    for i in 0..matrix.n_rows() {
        let loc = matrix.locations[i];
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            matrix.ids[i],
            loc.lon,
            loc.lat,
            matrix.labels[i],
            u8::from(matrix.is_train[i]),
            probs[i]
        ));
    }
    std::fs::write(&pred_path, body)
        .map_err(|e| deskaid_core::Error::io(format!("writing {}", pred_path.display()), e))?;
    rec.output(&pred_path);
    rec.finish("predict", &ctx.cfg)
}

/// Paints a banded risk lattice over the border polygon and exports it as
/// GeoJSON plus a band summary table.
pub fn riskmap(ctx: &Ctx) -> Result<(), CliError> {
    let geojson_path = ctx.path("riskmap/risk.geojson");
    let bands_path = ctx.path("riskmap/band_summary.csv");
    ctx.claim_outputs(&[&geojson_path, &bands_path])?;
    let mut rec = RunRecorder::start(&ctx.out);

    let catalog = ctx.catalog(&mut rec)?;
    let model = load_model(ctx, &mut rec)?;
    let border = border_polygon(&catalog)?;
    let hazards = load_polygons(&catalog, Role::Hazard)?;
    let grid = sample_evaluation_grid(&border, ctx.cfg.risk.grid_spacing_m, &hazards)?;

    let layers: PreparedLayers = prepare_layers(&catalog)?;
    let schema = FeatureSchema::new(ctx.cfg.feature_set, &layers);
    let matrix = build_matrix(&grid, &layers, &schema, &BTreeSet::new())?;
    let probs = model.predict_matrix(&matrix)?;

    let stamp = ctx.cfg.risk.stamp.clone().unwrap_or_else(utc_now);
    let map = RiskMap::build(
        &matrix.locations,
        &probs,
        ctx.cfg.risk.thresholds,
        model.kind.as_str(),
        &model.schema_fingerprint,
        &stamp,
    )?;
    export_risk_geojson(&map, &geojson_path)?;
    map.write_band_summary_csv(&bands_path)?;
    rec.output(&geojson_path);
    rec.output(&bands_path);
    rec.finish("riskmap", &ctx.cfg)
}

/// Feature diagnostics over the matrix: correlations, variance inflation,
/// and (for forests) impurity importance.
pub fn report(ctx: &Ctx) -> Result<(), CliError> {
    let corr_path = ctx.path("report/correlation.csv");
    let vif_path = ctx.path("report/vif.csv");
    let imp_path = ctx.path("report/importance.csv");
    ctx.claim_outputs(&[&corr_path, &vif_path, &imp_path])?;
    let mut rec = RunRecorder::start(&ctx.out);

    let matrix = load_matrix(ctx, &mut rec)?;

    let corr = correlation_matrix(&matrix, true)?;
    let mut names: Vec<String> = matrix.schema.names().iter().map(|s| s.to_string()).collect();
    names.push("label".to_string());
    let mut body = format!("feature,{}\n", names.join(","));
    for (name, row) in names.iter().zip(&corr) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        body.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    std::fs::write(&corr_path, body)
        .map_err(|e| deskaid_core::Error::io(format!("writing {}", corr_path.display()), e))?;
    rec.output(&corr_path);

    let factors = vif(&matrix)?;
    let mut body = String::from("feature,vif\n");
    for (name, v) in matrix.schema.names().iter().zip(&factors) {
        body.push_str(&format!("{name},{v:.6}\n"));
    }
    std::fs::write(&vif_path, body)
        .map_err(|e| deskaid_core::Error::io(format!("writing {}", vif_path.display()), e))?;
    rec.output(&vif_path);

    let model_path = ctx.path("models/model.json");
    if model_path.exists() {
        let model = TrainedModel::load(&model_path)?;
        if model.kind == ModelKind::RandomForest {
            rec.input(&model_path);
            let ranking = feature_importance(&model, &matrix.schema)?;
            let mut body = String::from("feature,importance\n");
            for (name, score) in &ranking {
                body.push_str(&format!("{name},{score:.6}\n"));
            }
            std::fs::write(&imp_path, body)
                .map_err(|e| deskaid_core::Error::io(format!("writing {}", imp_path.display()), e))?;
            rec.output(&imp_path);
        }
    }
    rec.finish("report", &ctx.cfg)
}
