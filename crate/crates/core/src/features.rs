//! Feature engineering: turns a location into its feature vector.
//!
//! Continuous features are nearest-hub distances in meters, raster samples
//! (population density, elevation), the derived hill slope, and the death
//! count of the nearest conflict event. Categorical features take the
//! nearest hub's vocabulary index, with index 0 reserved for "unknown".
//!
//! Hub reduction by layer geometry: polygons contribute their centroids,
//! polylines their vertices, point layers themselves. The border is the
//! exception: distance-to-border means distance to the boundary itself, so
//! a border polygon contributes its ring vertices.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geo::{extract_vertices, polygon_centroid, GeoPoint, METERS_PER_DEG_LAT};
use crate::index::{build_index, HubIndex};
use crate::ingest::{
    parse_ascii_grid, parse_conflict_csv, parse_geojson_layer, GeometryKind, LayerCatalog,
    RasterGrid, Role,
};
use crate::sampling::SampleSet;
use crate::Result;

// ── Schema ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Base7,
    Expanded18,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
    pub unit: String,
    /// Full vocabulary for categoricals, "unknown" at index 0.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vocabulary: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub set: FeatureSet,
    pub features: Vec<FeatureDef>,
}

/// How each feature is computed. Declared in output order; the starred
/// base set is the distance-to-infrastructure core plus the raster trio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FeatureSource {
    DistanceTo(Role),
    CategoryOf(Role),
    DeathsOfNearest,
    Raster(Role),
    Slope,
}

struct FeatureSpec {
    name: &'static str,
    unit: &'static str,
    source: FeatureSource,
    base: bool,
}

const FULL_SET: [FeatureSpec; 18] = [
    FeatureSpec { name: "building_distance_m", unit: "m", source: FeatureSource::DistanceTo(Role::Building), base: true },
    FeatureSpec { name: "financial_distance_m", unit: "m", source: FeatureSource::DistanceTo(Role::Financial), base: false },
    FeatureSpec { name: "education_distance_m", unit: "m", source: FeatureSource::DistanceTo(Role::Education), base: false },
    FeatureSpec { name: "education_type", unit: "category", source: FeatureSource::CategoryOf(Role::Education), base: false },
    FeatureSpec { name: "airport_distance_m", unit: "m", source: FeatureSource::DistanceTo(Role::Airport), base: false },
    FeatureSpec { name: "airport_type", unit: "category", source: FeatureSource::CategoryOf(Role::Airport), base: false },
    FeatureSpec { name: "health_distance_m", unit: "m", source: FeatureSource::DistanceTo(Role::Health), base: false },
    FeatureSpec { name: "health_type", unit: "category", source: FeatureSource::CategoryOf(Role::Health), base: false },
    FeatureSpec { name: "road_distance_m", unit: "m", source: FeatureSource::DistanceTo(Role::Road), base: true },
    FeatureSpec { name: "waterway_distance_m", unit: "m", source: FeatureSource::DistanceTo(Role::Waterway), base: true },
    FeatureSpec { name: "controlled_area_distance_m", unit: "m", source: FeatureSource::DistanceTo(Role::ControlledArea), base: false },
    FeatureSpec { name: "authority", unit: "category", source: FeatureSource::CategoryOf(Role::ControlledArea), base: false },
    FeatureSpec { name: "conflict_distance_m", unit: "m", source: FeatureSource::DistanceTo(Role::Conflict), base: false },
    FeatureSpec { name: "estimated_deaths", unit: "count", source: FeatureSource::DeathsOfNearest, base: false },
    FeatureSpec { name: "border_distance_m", unit: "m", source: FeatureSource::DistanceTo(Role::Border), base: true },
    FeatureSpec { name: "population_density", unit: "persons/km^2", source: FeatureSource::Raster(Role::Population), base: true },
    FeatureSpec { name: "elevation_m", unit: "m", source: FeatureSource::Raster(Role::Elevation), base: true },
    FeatureSpec { name: "hill_slope_pct", unit: "%", source: FeatureSource::Slope, base: true },
];

impl FeatureSchema {
    /// Builds the schema for `set`, pulling categorical vocabularies from
    /// the prepared layers.
    pub fn new(set: FeatureSet, layers: &PreparedLayers) -> Self {
        let features = FULL_SET
            .iter()
            .filter(|s| matches!(set, FeatureSet::Expanded18) || s.base)
            .map(|s| {
                let vocabulary = match s.source {
                    FeatureSource::CategoryOf(role) => Some(layers.vocabulary(role)),
                    _ => None,
                };
                FeatureDef {
                    name: s.name.to_string(),
                    kind: if vocabulary.is_some() { FeatureKind::Categorical } else { FeatureKind::Continuous },
                    unit: s.unit.to_string(),
                    vocabulary,
                }
            })
            .collect();
        FeatureSchema { set, features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    fn sources(&self) -> Result<Vec<FeatureSource>> {
        self.features
            .iter()
            .map(|f| {
                FULL_SET
                    .iter()
                    .find(|s| s.name == f.name)
                    .map(|s| s.source)
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown feature {:?}", f.name)))
            })
            .collect()
    }
}

// ── Prepared layers ─────────────────────────────────────────────────────

struct HubLayer {
    index: HubIndex,
    /// Vocabulary index per hub, aligned with hub ids. Present only when
    /// the catalog binds a category attribute for this layer.
    categories: Option<Vec<u32>>,
    /// Death count per hub; conflict events only.
    deaths: Option<Vec<u32>>,
    vocabulary: Vec<String>,
}

/// Immutable, query-ready form of every catalog layer: hub indexes for the
/// distance features, rasters for the sampled ones, and the slope grid
/// derived from elevation.
pub struct PreparedLayers {
    hubs: BTreeMap<Role, HubLayer>,
    population: Option<RasterGrid>,
    elevation: Option<RasterGrid>,
    slope: Option<RasterGrid>,
    base_dir: PathBuf,
}

const DISTANCE_ROLES: [Role; 10] = [
    Role::Building,
    Role::Financial,
    Role::Education,
    Role::Airport,
    Role::Health,
    Role::Road,
    Role::Waterway,
    Role::ControlledArea,
    Role::Conflict,
    Role::Border,
];

/// Loads and indexes every layer the catalog binds. Roles absent from the
/// catalog are skipped; featurization fails later only if the schema
/// actually needs them.
pub fn prepare_layers(catalog: &LayerCatalog) -> Result<PreparedLayers> {
    let mut hubs = BTreeMap::new();
    for role in DISTANCE_ROLES {
        let Ok(binding) = catalog.binding(role) else { continue };
        let path = catalog.path_for(role)?;
        let vocabulary: Vec<String> = std::iter::once("unknown".to_string())
            .chain(binding.category_vocabulary.clone().unwrap_or_default())
            .collect();
        let category_of = |attrs: &BTreeMap<String, String>| -> u32 {
            binding
                .category_attribute
                .as_deref()
                .and_then(|a| attrs.get(a))
                .and_then(|v| vocabulary.iter().position(|c| c == v))
                .unwrap_or(0) as u32
        };
        let mut points: Vec<GeoPoint> = Vec::new();
        let mut categories: Vec<u32> = Vec::new();
        let mut deaths: Option<Vec<u32>> = None;
        match binding.kind {
            GeometryKind::Polygon => {
                for poly in parse_geojson_layer(&path, GeometryKind::Polygon)?.into_polygons() {
                    if role == Role::Border {
                        // ring vertices: the border feature measures
                        // distance to the boundary, not to its center
                        let cat = category_of(&poly.attributes);
                        for v in extract_vertices_of_ring(&poly.exterior) {
                            points.push(v);
                            categories.push(cat);
                        }
                    } else {
                        points.push(polygon_centroid(&poly)?);
                        categories.push(category_of(&poly.attributes));
                    }
                }
            }
            GeometryKind::Polyline => {
                for line in parse_geojson_layer(&path, GeometryKind::Polyline)?.into_polylines() {
                    let cat = category_of(&line.attributes);
                    for v in extract_vertices(&line) {
                        points.push(v);
                        categories.push(cat);
                    }
                }
            }
            GeometryKind::Point => {
                for pf in parse_geojson_layer(&path, GeometryKind::Point)?.into_points() {
                    points.push(pf.point);
                    categories.push(category_of(&pf.attributes));
                }
            }
            GeometryKind::EventCsv => {
                let events = parse_conflict_csv(&path)?;
                let mut d = Vec::with_capacity(events.len());
                for e in events {
                    points.push(e.location);
                    categories.push(0);
                    d.push(e.deaths);
                }
                deaths = Some(d);
            }
            GeometryKind::Raster => {
                return Err(Error::GeometryKindMismatch {
                    path: path.display().to_string(),
                    index: 0,
                    expected: "polygon, polyline, point or event_csv".into(),
                    found: "raster".into(),
                });
            }
        }
        if points.is_empty() {
            return Err(Error::EmptyLayer { path: path.display().to_string() });
        }
        let index = build_index(points.into_iter().enumerate().map(|(i, p)| (i as u64, p)))?;
        let categories = binding.category_attribute.is_some().then_some(categories);
        hubs.insert(role, HubLayer { index, categories, deaths, vocabulary });
    }

    let load_raster = |role: Role| -> Result<Option<RasterGrid>> {
        match catalog.binding(role) {
            Ok(_) => Ok(Some(parse_ascii_grid(&catalog.path_for(role)?)?)),
            Err(_) => Ok(None),
        }
    };
    let population = load_raster(Role::Population)?;
    let elevation = load_raster(Role::Elevation)?;
    let slope = elevation.as_ref().map(derive_slope_raster).transpose()?;

    Ok(PreparedLayers { hubs, population, elevation, slope, base_dir: catalog.base_dir.clone() })
}

fn extract_vertices_of_ring(ring: &[GeoPoint]) -> Vec<GeoPoint> {
    let mut v = ring.to_vec();
    if v.len() > 2 && v.first() == v.last() {
        v.pop();
    }
    v
}

impl PreparedLayers {
    fn hub_layer(&self, role: Role) -> Result<&HubLayer> {
        self.hubs.get(&role).ok_or_else(|| Error::MissingLayer {
            path: self.base_dir.display().to_string(),
            role: role.as_str().to_string(),
        })
    }

    fn raster(&self, role: Role) -> Result<&RasterGrid> {
        let grid = match role {
            Role::Population => &self.population,
            Role::Elevation => &self.elevation,
            _ => &None,
        };
        grid.as_ref().ok_or_else(|| Error::MissingLayer {
            path: self.base_dir.display().to_string(),
            role: role.as_str().to_string(),
        })
    }

    /// Full vocabulary for a role, "unknown" first. Empty-but-for-unknown
    /// when the role is unbound or has no category attribute.
    pub fn vocabulary(&self, role: Role) -> Vec<String> {
        self.hubs
            .get(&role)
            .map(|h| h.vocabulary.clone())
            .unwrap_or_else(|| vec!["unknown".to_string()])
    }

    pub fn slope_raster(&self) -> Option<&RasterGrid> {
        self.slope.as_ref()
    }
}

// ── Raster operations ───────────────────────────────────────────────────

/// Horn's 3x3 slope in percent: 100 * |gradient|, with the east-west cell
/// size shrunk by cos(latitude) per row. Border cells and any cell whose
/// 3x3 window touches nodata come out as nodata.
pub fn derive_slope_raster(elevation: &RasterGrid) -> Result<RasterGrid> {
    if elevation.nrows < 3 || elevation.ncols < 3 {
        return Err(Error::GridTooSmall { rows: elevation.nrows, cols: elevation.ncols });
    }
    let (nrows, ncols) = (elevation.nrows, elevation.ncols);
    let dy = elevation.cellsize * METERS_PER_DEG_LAT;
    let mut values = vec![elevation.nodata; nrows * ncols];
    for r in 1..nrows - 1 {
        let dx = dy * elevation.row_center_lat(r).to_radians().cos();
        for c in 1..ncols - 1 {
            // window rows run north to south
            let w = [
                [elevation.value(r - 1, c - 1), elevation.value(r - 1, c), elevation.value(r - 1, c + 1)],
                [elevation.value(r, c - 1), elevation.value(r, c), elevation.value(r, c + 1)],
                [elevation.value(r + 1, c - 1), elevation.value(r + 1, c), elevation.value(r + 1, c + 1)],
            ];
            if w.iter().flatten().any(|&v| elevation.is_nodata(v)) {
                continue;
            }
            let dz_dx = ((w[0][2] + 2.0 * w[1][2] + w[2][2]) - (w[0][0] + 2.0 * w[1][0] + w[2][0])) / (8.0 * dx);
            let dz_dy = ((w[0][0] + 2.0 * w[0][1] + w[0][2]) - (w[2][0] + 2.0 * w[2][1] + w[2][2])) / (8.0 * dy);
            values[r * ncols + c] = 100.0 * (dz_dx * dz_dx + dz_dy * dz_dy).sqrt();
        }
    }
    Ok(RasterGrid {
        ncols,
        nrows,
        xllcorner: elevation.xllcorner,
        yllcorner: elevation.yllcorner,
        cellsize: elevation.cellsize,
        nodata: elevation.nodata,
        values,
    })
}

/// Value of the cell containing `p`; nearest-cell, no interpolation.
pub fn sample_raster(grid: &RasterGrid, p: GeoPoint) -> Result<f64> {
    let (row, col) = grid.cell_of(p).ok_or(Error::OutOfExtent { lon: p.lon, lat: p.lat })?;
    let v = grid.value(row, col);
    if grid.is_nodata(v) {
        return Err(Error::NoDataCell { lon: p.lon, lat: p.lat });
    }
    Ok(v)
}

// ── Featurization ───────────────────────────────────────────────────────

fn featurize_with_sources(p: GeoPoint, layers: &PreparedLayers, sources: &[FeatureSource]) -> Result<Vec<f64>> {
    sources
        .iter()
        .map(|src| -> Result<f64> {
            match *src {
                FeatureSource::DistanceTo(role) => Ok(layers.hub_layer(role)?.index.nearest(p).1),
                FeatureSource::CategoryOf(role) => {
                    let layer = layers.hub_layer(role)?;
                    let (id, _) = layer.index.nearest(p);
                    Ok(layer.categories.as_ref().map_or(0, |c| c[id as usize]) as f64)
                }
                FeatureSource::DeathsOfNearest => {
                    let layer = layers.hub_layer(Role::Conflict)?;
                    let (id, _) = layer.index.nearest(p);
                    let deaths = layer.deaths.as_ref().ok_or_else(|| {
                        Error::MissingColumn { path: layers.base_dir.display().to_string(), column: "deaths".into() }
                    })?;
                    Ok(deaths[id as usize] as f64)
                }
                FeatureSource::Raster(role) => sample_raster(layers.raster(role)?, p),
                FeatureSource::Slope => {
                    let slope = layers.slope.as_ref().ok_or_else(|| Error::MissingLayer {
                        path: layers.base_dir.display().to_string(),
                        role: Role::Elevation.as_str().to_string(),
                    })?;
                    sample_raster(slope, p)
                }
            }
        })
        .collect()
}

/// The schema-ordered feature vector for one location. Pure function of
/// (point, layers).
pub fn featurize_point(p: GeoPoint, layers: &PreparedLayers, schema: &FeatureSchema) -> Result<Vec<f64>> {
    featurize_with_sources(p, layers, &schema.sources()?)
}

// ── Labeled matrix ──────────────────────────────────────────────────────

/// Feature matrix with labels, ids, locations and a training mask. Column
/// means and standard deviations are computed over training rows only, so
/// standardizing a model never peeks at held-out rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub schema: FeatureSchema,
    pub ids: Vec<u64>,
    pub locations: Vec<GeoPoint>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub is_train: Vec<bool>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixSidecar {
    schema: FeatureSchema,
    means: Vec<f64>,
    stds: Vec<f64>,
    train_ids: Vec<u64>,
}

impl LabeledMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.schema.column(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    fn compute_stats(&mut self) {
        let p = self.n_cols();
        let train_rows: Vec<&Vec<f64>> =
            self.rows.iter().zip(&self.is_train).filter(|(_, t)| **t).map(|(r, _)| r).collect();
        let n = train_rows.len().max(1) as f64;
        self.means = (0..p).map(|j| train_rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        self.stds = (0..p)
            .map(|j| {
                let m = self.means[j];
                (train_rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect();
    }

    /// Writes `id,lon,lat,label,<features>` rows plus a `<stem>.schema.json`
    /// sidecar holding the schema, training stats and training-row ids.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("id,lon,lat,label");
        for name in self.schema.names() {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for i in 0..self.n_rows() {
            s.push_str(&format!("{},{},{},{}", self.ids[i], self.locations[i].lon, self.locations[i].lat, self.labels[i]));
            for v in &self.rows[i] {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        let sidecar = MatrixSidecar {
            schema: self.schema.clone(),
            means: self.means.clone(),
            stds: self.stds.clone(),
            train_ids: self.ids.iter().zip(&self.is_train).filter(|(_, t)| **t).map(|(id, _)| *id).collect(),
        };
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(sidecar_path(path), json + "\n")
            .map_err(|e| Error::io(format!("writing {}", sidecar_path(path).display()), e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let side_path = sidecar_path(path);
        let side_text = std::fs::read_to_string(&side_path)
            .map_err(|e| Error::io(format!("reading {}", side_path.display()), e))?;
        let sidecar: MatrixSidecar = serde_json::from_str(&side_text).map_err(|e| Error::ParseError {
            path: side_path.display().to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let display = path.display().to_string();
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::MissingColumn { path: display.clone(), column: "id".into() })?;
        let expected_header: Vec<String> = ["id", "lon", "lat", "label"]
            .into_iter()
            .map(str::to_string)
            .chain(sidecar.schema.names().into_iter().map(str::to_string))
            .collect();
        let found: Vec<&str> = header.split(',').map(str::trim).collect();
        if found != expected_header.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::SchemaMismatch {
                model: expected_header.join(","),
                data: header.to_string(),
            });
        }
        let train_ids: BTreeSet<u64> = sidecar.train_ids.iter().copied().collect();
        let (mut ids, mut locations, mut rows, mut labels, mut is_train) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let err = |message: String| Error::ParseError { path: display.clone(), line: i + 1, column: 1, message };
            if f.len() != expected_header.len() {
                return Err(err(format!("expected {} fields, found {}", expected_header.len(), f.len())));
            }
            let id: u64 = f[0].parse().map_err(|_| err(format!("bad id {:?}", f[0])))?;
            let lon: f64 = f[1].parse().map_err(|_| err(format!("bad lon {:?}", f[1])))?;
            let lat: f64 = f[2].parse().map_err(|_| err(format!("bad lat {:?}", f[2])))?;
            let label: u8 = match f[3] {
                "0" => 0,
                "1" => 1,
                other => return Err(err(format!("bad label {other:?}"))),
            };
            let mut row = Vec::with_capacity(sidecar.schema.len());
            for v in &f[4..] {
                row.push(v.parse::<f64>().map_err(|_| err(format!("bad value {v:?}")))?);
            }
            is_train.push(train_ids.contains(&id));
            ids.push(id);
            locations.push(GeoPoint::new(lon, lat).map_err(|e| err(e.to_string()))?);
            rows.push(row);
            labels.push(label);
        }
        Ok(LabeledMatrix {
            schema: sidecar.schema,
            ids,
            locations,
            rows,
            labels,
            is_train,
            means: sidecar.means,
            stds: sidecar.stds,
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("schema.json")
}

/// Featurizes every sample, id-ordered. Rows are computed in parallel;
/// any failures abort the build with the offending sample ids.
///
/// `train_ids` flags the rows whose values feed the column statistics. An
/// empty set means every row is a training row.
pub fn build_matrix(
    samples: &SampleSet,
    layers: &PreparedLayers,
    schema: &FeatureSchema,
    train_ids: &BTreeSet<u64>,
) -> Result<LabeledMatrix> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("cannot featurize an empty sample set".into()));
    }
    let mut points = samples.points.clone();
    points.sort_by_key(|p| p.id);
    let sources = schema.sources()?;
    let results: Vec<Result<Vec<f64>>> =
        points.par_iter().map(|s| featurize_with_sources(s.location, layers, &sources)).collect();

    let mut rows = Vec::with_capacity(points.len());
    let mut failed: Vec<u64> = Vec::new();
    for (s, r) in points.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::error!("featurizing sample {}: {e}", s.id);
                failed.push(s.id);
            }
        }
    }
    if !failed.is_empty() {
        return Err(Error::FeaturizationFailed { ids: failed });
    }

    let mut matrix = LabeledMatrix {
        schema: schema.clone(),
        ids: points.iter().map(|p| p.id).collect(),
        locations: points.iter().map(|p| p.location).collect(),
        labels: points.iter().map(|p| p.label.as_u8()).collect(),
        is_train: points.iter().map(|p| train_ids.is_empty() || train_ids.contains(&p.id)).collect(),
        rows,
        means: Vec::new(),
        stds: Vec::new(),
    };
    matrix.compute_stats();
    Ok(matrix)
}

// ── Tests ───────────────────────────────────────────────────────────────
