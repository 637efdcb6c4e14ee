//! Layer ingestion and export: a GeoJSON subset (FeatureCollections of
//! Point/LineString/Polygon and their Multi* forms, WGS84, (lon, lat)
//! order), ESRI ASCII grids, the conflict-event CSV, and the catalog file
//! that binds pipeline roles to data files.
//!
//! Parsers are strict: a feature that violates its type invariants fails
//! the whole parse with a located error rather than being skipped. Writers
//! are deterministic byte-for-byte given the same inputs. Every writer's
//! output is accepted by the matching parser.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Error;
use crate::geo::{GeoPoint, PointFeature, PolygonFeature, PolylineFeature};
use crate::Result;

// ── Roles and catalog ───────────────────────────────────────────────────

/// The data roles a catalog can bind. Distance features, sampling and the
/// synthetic generator all address layers through these names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Hazard,
    Building,
    Financial,
    Education,
    Airport,
    Health,
    Road,
    Waterway,
    ControlledArea,
    Conflict,
    Border,
    Population,
    Elevation,
}

impl Role {
    pub const ALL: [Role; 13] = [
        Role::Hazard,
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
        Role::Population,
        Role::Elevation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Hazard => "hazard",
            Role::Building => "building",
            Role::Financial => "financial",
            Role::Education => "education",
            Role::Airport => "airport",
            Role::Health => "health",
            Role::Road => "road",
            Role::Waterway => "waterway",
            Role::ControlledArea => "controlled_area",
            Role::Conflict => "conflict",
            Role::Border => "border",
            Role::Population => "population",
            Role::Elevation => "elevation",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Geometry kind a binding declares (and a parser enforces).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Polygon,
    Polyline,
    Point,
    Raster,
    EventCsv,
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeometryKind::Polygon => "polygon",
            GeometryKind::Polyline => "polyline",
            GeometryKind::Point => "point",
            GeometryKind::Raster => "raster",
            GeometryKind::EventCsv => "event_csv",
        })
    }
}

/// One catalog entry: where a role's data lives and how to read it.
/// `category_attribute` names the attribute carrying the categorical value
/// for layers that have one; `category_vocabulary` lists the known values
/// (index 0 is reserved for "unknown" and is not listed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBinding {
    pub path: String,
    pub kind: GeometryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_attribute: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_vocabulary: Option<Vec<String>>,
}

/// Role-to-file bindings, loaded from a JSON catalog. Relative paths
/// resolve against the catalog file's directory.
#[derive(Debug, Clone)]
pub struct LayerCatalog {
    pub roles: BTreeMap<Role, LayerBinding>,
    pub base_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CatalogFile {
    roles: BTreeMap<Role, LayerBinding>,
}

impl LayerCatalog {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading catalog {}", path.display()), e))?;
        let file: CatalogFile = serde_json::from_str(&text).map_err(|e| json_error(path, &e))?;
        let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Ok(LayerCatalog { roles: file.roles, base_dir })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CatalogFile { roles: self.roles.clone() };
        let mut text = serde_json::to_string_pretty(&file).expect("catalog serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(format!("writing catalog {}", path.display()), e))
    }

    pub fn binding(&self, role: Role) -> Result<&LayerBinding> {
        self.roles.get(&role).ok_or_else(|| Error::MissingLayer {
            path: self.base_dir.display().to_string(),
            role: role.to_string(),
        })
    }

    /// Absolute path of a role's file.
    pub fn path_for(&self, role: Role) -> Result<PathBuf> {
        Ok(self.base_dir.join(&self.binding(role)?.path))
    }

    /// Bound path existence check, used by the CLI before any work starts.
    pub fn validate_paths(&self) -> Result<()> {
        for (role, binding) in &self.roles {
            let p = self.base_dir.join(&binding.path);
            if !p.is_file() {
                return Err(Error::MissingLayer { path: p.display().to_string(), role: role.to_string() });
            }
        }
        Ok(())
    }
}

// ── GeoJSON ─────────────────────────────────────────────────────────────

/// Features parsed from one GeoJSON layer, by geometry kind.
#[derive(Debug, Clone)]
pub enum LayerFeatures {
    Polygons(Vec<PolygonFeature>),
    Polylines(Vec<PolylineFeature>),
    Points(Vec<PointFeature>),
}

impl LayerFeatures {
    pub fn into_polygons(self) -> Vec<PolygonFeature> {
        match self {
            LayerFeatures::Polygons(v) => v,
            _ => panic!("layer is not polygons"),
        }
    }
    pub fn into_polylines(self) -> Vec<PolylineFeature> {
        match self {
            LayerFeatures::Polylines(v) => v,
            _ => panic!("layer is not polylines"),
        }
    }
    pub fn into_points(self) -> Vec<PointFeature> {
        match self {
            LayerFeatures::Points(v) => v,
            _ => panic!("layer is not points"),
        }
    }
}

fn json_error(path: &Path, e: &serde_json::Error) -> Error {
    Error::ParseError {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn feature_error(path: &Path, index: usize, message: impl fmt::Display) -> Error {
    Error::ParseError {
        path: path.display().to_string(),
        line: 0,
        column: 0,
        message: format!("feature {index}: {message}"),
    }
}

/// Parses a GeoJSON FeatureCollection whose features all carry the expected
/// geometry kind. Multi* geometries are flattened into one feature per
/// part, each sharing the original attribute table.
pub fn parse_geojson_layer(path: &Path, expected: GeometryKind) -> Result<LayerFeatures> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| json_error(path, &e))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(feature_error(path, 0, "root is not a FeatureCollection"));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| feature_error(path, 0, "missing features array"))?;
    if features.is_empty() {
        return Err(Error::EmptyLayer { path: path.display().to_string() });
    }

    let mut polygons = Vec::new();
    let mut polylines = Vec::new();
    let mut points = Vec::new();
    for (i, feat) in features.iter().enumerate() {
        let geom = feat
            .get("geometry")
            .filter(|g| !g.is_null())
            .ok_or_else(|| feature_error(path, i, "missing geometry"))?;
        let gtype = geom
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| feature_error(path, i, "geometry has no type"))?;
        let attrs = parse_properties(feat.get("properties"));
        let coords = geom
            .get("coordinates")
            .ok_or_else(|| feature_error(path, i, "geometry has no coordinates"))?;

        let (canonical, parts): (GeometryKind, Vec<&Value>) = match gtype {
            "Point" => (GeometryKind::Point, vec![coords]),
            "LineString" => (GeometryKind::Polyline, vec![coords]),
            "Polygon" => (GeometryKind::Polygon, vec![coords]),
            "MultiPoint" | "MultiLineString" | "MultiPolygon" => {
                let inner = coords
                    .as_array()
                    .ok_or_else(|| feature_error(path, i, "Multi* coordinates not an array"))?;
                let kind = match gtype {
                    "MultiPoint" => GeometryKind::Point,
                    "MultiLineString" => GeometryKind::Polyline,
                    _ => GeometryKind::Polygon,
                };
                (kind, inner.iter().collect())
            }
            other => {
                return Err(Error::GeometryKindMismatch {
                    path: path.display().to_string(),
                    index: i,
                    expected: expected.to_string(),
                    found: other.to_string(),
                })
            }
        };
        if canonical != expected {
            return Err(Error::GeometryKindMismatch {
                path: path.display().to_string(),
                index: i,
                expected: expected.to_string(),
                found: canonical.to_string(),
            });
        }
        for part in parts {
            match canonical {
                GeometryKind::Point => {
                    let p = parse_position(part).map_err(|m| feature_error(path, i, m))?;
                    points.push(PointFeature { point: p, attributes: attrs.clone() });
                }
                GeometryKind::Polyline => {
                    let verts = parse_position_array(part).map_err(|m| feature_error(path, i, m))?;
                    let verts = dedup_consecutive(verts);
                    let line = PolylineFeature::new(verts, attrs.clone()).map_err(|e| feature_error(path, i, e))?;
                    polylines.push(line);
                }
                GeometryKind::Polygon => {
                    let rings = part
                        .as_array()
                        .ok_or_else(|| feature_error(path, i, "polygon coordinates not an array of rings"))?;
                    if rings.is_empty() {
                        return Err(feature_error(path, i, "polygon has no rings"));
                    }
                    let mut parsed: Vec<Vec<GeoPoint>> = Vec::with_capacity(rings.len());
                    for ring in rings {
                        let mut verts = parse_position_array(ring).map_err(|m| feature_error(path, i, m))?;
                        verts = dedup_consecutive(verts);
                        if verts.first() != verts.last() {
                            if let Some(&first) = verts.first() {
                                verts.push(first); // tolerate unclosed input rings
                            }
                        }
                        parsed.push(verts);
                    }
                    let exterior = parsed.remove(0);
                    let poly = PolygonFeature::new(exterior, parsed, attrs.clone())
                        .map_err(|e| feature_error(path, i, e))?;
                    polygons.push(poly);
                }
                _ => unreachable!(),
            }
        }
    }

    Ok(match expected {
        GeometryKind::Polygon => LayerFeatures::Polygons(polygons),
        GeometryKind::Polyline => LayerFeatures::Polylines(polylines),
        GeometryKind::Point => LayerFeatures::Points(points),
        _ => unreachable!("raster and event_csv layers are not GeoJSON"),
    })
}

fn parse_properties(props: Option<&Value>) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    if let Some(Value::Object(map)) = props {
        for (k, v) in map {
            let s = match v {
                Value::Null => continue,
                Value::String(s) => s.clone(),
                Value::Bool(b) => b.to_string(),
                Value::Number(n) => n.to_string(),
                other => other.to_string(),
            };
            out.insert(k.clone(), s);
        }
    }
    out
}

fn parse_position(v: &Value) -> std::result::Result<GeoPoint, String> {
    let arr = v.as_array().ok_or("position is not an array")?;
    if arr.len() < 2 {
        return Err("position has fewer than 2 numbers".into());
    }
    let lon = arr[0].as_f64().ok_or("longitude is not a number")?;
    let lat = arr[1].as_f64().ok_or("latitude is not a number")?;
    GeoPoint::new(lon, lat).map_err(|e| e.to_string())
}

fn parse_position_array(v: &Value) -> std::result::Result<Vec<GeoPoint>, String> {
    let arr = v.as_array().ok_or("coordinate list is not an array")?;
    arr.iter().map(parse_position).collect()
}

fn dedup_consecutive(mut v: Vec<GeoPoint>) -> Vec<GeoPoint> {
    v.dedup();
    v
}

// ── GeoJSON writers ─────────────────────────────────────────────────────

fn position(p: &GeoPoint) -> Value {
    Value::Array(vec![json_f64(p.lon), json_f64(p.lat)])
}

fn json_f64(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).expect("finite coordinate")
}

fn feature_value(geometry: Value, attrs: &BTreeMap<String, String>) -> Value {
    let props: serde_json::Map<String, Value> =
        attrs.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
    serde_json::json!({ "type": "Feature", "geometry": geometry, "properties": Value::Object(props) })
}

fn write_collection(path: &Path, features: Vec<Value>) -> Result<()> {
    let doc = serde_json::json!({ "type": "FeatureCollection", "features": features });
    let mut text = serde_json::to_string(&doc).expect("geojson serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_polygon_layer(path: &Path, polys: &[PolygonFeature]) -> Result<()> {
    let features = polys
        .iter()
        .map(|p| {
            let mut rings = vec![Value::Array(p.exterior.iter().map(position).collect())];
            rings.extend(p.holes.iter().map(|h| Value::Array(h.iter().map(position).collect())));
            feature_value(serde_json::json!({ "type": "Polygon", "coordinates": rings }), &p.attributes)
        })
        .collect();
    write_collection(path, features)
}

pub fn write_polyline_layer(path: &Path, lines: &[PolylineFeature]) -> Result<()> {
    let features = lines
        .iter()
        .map(|l| {
            let coords = Value::Array(l.vertices.iter().map(position).collect());
            feature_value(serde_json::json!({ "type": "LineString", "coordinates": coords }), &l.attributes)
        })
        .collect();
    write_collection(path, features)
}

pub fn write_point_layer(path: &Path, pts: &[PointFeature]) -> Result<()> {
    let features = pts
        .iter()
        .map(|p| feature_value(serde_json::json!({ "type": "Point", "coordinates": position(&p.point) }), &p.attributes))
        .collect();
    write_collection(path, features)
}

// ── ESRI ASCII grid ─────────────────────────────────────────────────────

/// A georeferenced raster. Values are row-major with the first row being
/// the northernmost; `nodata` marks missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub ncols: usize,
    pub nrows: usize,
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cellsize: f64,
    pub nodata: f64,
    pub values: Vec<f64>,
}

impl RasterGrid {
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.ncols + col]
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata
    }

    /// Grid cell containing the point, or None when outside the extent.
    /// Rows count from the north edge to match `values` layout.
    pub fn cell_of(&self, p: GeoPoint) -> Option<(usize, usize)> {
        let col = (p.lon - self.xllcorner) / self.cellsize;
        let row_south = (p.lat - self.yllcorner) / self.cellsize;
        if col < 0.0 || row_south < 0.0 {
            return None;
        }
        let (col, row_south) = (col.floor() as usize, row_south.floor() as usize);
        if col >= self.ncols || row_south >= self.nrows {
            return None;
        }
        Some((self.nrows - 1 - row_south, col))
    }

    /// Latitude of a row's cell centers (rows count from the north edge).
    pub fn row_center_lat(&self, row: usize) -> f64 {
        self.yllcorner + (self.nrows - row) as f64 * self.cellsize - 0.5 * self.cellsize
    }

    /// Writes the grid in ESRI ASCII format. Header coordinates keep full
    /// precision so extents survive round trips; cell values are emitted
    /// with 6 significant digits.
    pub fn write_ascii_grid(&self, path: &Path) -> Result<()> {
        let mut s = String::with_capacity(self.values.len() * 8 + 128);
        s.push_str(&format!("ncols {}\n", self.ncols));
        s.push_str(&format!("nrows {}\n", self.nrows));
        s.push_str(&format!("xllcorner {}\n", self.xllcorner));
        s.push_str(&format!("yllcorner {}\n", self.yllcorner));
        s.push_str(&format!("cellsize {}\n", self.cellsize));
        s.push_str(&format!("NODATA_value {}\n", format_sig6(self.nodata)));
        for row in 0..self.nrows {
            for col in 0..self.ncols {
                if col > 0 {
                    s.push(' ');
                }
                s.push_str(&format_sig6(self.value(row, col)));
            }
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Decimal rendering with 6 significant digits (plain notation; values in
/// this pipeline stay within a few orders of magnitude of 1).
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (5 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn parse_ascii_grid(path: &Path) -> Result<RasterGrid> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let display = path.display().to_string();
    let mut header: BTreeMap<String, String> = BTreeMap::new();
    let mut lines = text.lines().enumerate();
    while header.len() < 6 {
        let (i, line) = lines
            .next()
            .ok_or_else(|| Error::HeaderMissing { path: display.clone(), field: "values".into() })?;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next()) {
            (Some(k), Some(v)) => {
                header.insert(k.to_ascii_lowercase(), v.to_string());
            }
            _ => {
                return Err(Error::ParseError {
                    path: display,
                    line: i + 1,
                    column: 1,
                    message: "malformed header line".into(),
                })
            }
        }
    }
    let field = |name: &str| -> Result<String> {
        header.get(name).cloned().ok_or_else(|| Error::HeaderMissing { path: display.clone(), field: name.into() })
    };
    let parse_usize = |name: &str| -> Result<usize> {
        field(name)?.parse::<usize>().map_err(|_| Error::HeaderMissing { path: display.clone(), field: name.into() })
    };
    let parse_f64 = |name: &str| -> Result<f64> {
        field(name)?.parse::<f64>().map_err(|_| Error::HeaderMissing { path: display.clone(), field: name.into() })
    };
    let ncols = parse_usize("ncols")?;
    let nrows = parse_usize("nrows")?;
    let xllcorner = parse_f64("xllcorner")?;
    let yllcorner = parse_f64("yllcorner")?;
    let cellsize = parse_f64("cellsize")?;
    let nodata = parse_f64("nodata_value")?;

    let mut values = Vec::with_capacity(ncols * nrows);
    for (i, line) in lines {
        for (j, tok) in line.split_whitespace().enumerate() {
            let v: f64 = tok.parse().map_err(|_| Error::ParseError {
                path: display.clone(),
                line: i + 1,
                column: j + 1,
                message: format!("bad cell value {tok:?}"),
            })?;
            values.push(v);
        }
    }
    if values.len() != ncols * nrows {
        return Err(Error::CountMismatch { path: display, expected: ncols * nrows, found: values.len() });
    }
    Ok(RasterGrid { ncols, nrows, xllcorner, yllcorner, cellsize, nodata, values })
}

// ── Conflict events ─────────────────────────────────────────────────────

/// A recorded conflict event with its estimated death count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConflictEvent {
    pub location: GeoPoint,
    pub deaths: u32,
}

/// Parses the conflict CSV (`lon,lat,deaths` header, any column order,
/// extra columns ignored). Bad numbers, out-of-range coordinates and
/// negative death counts fail the parse at their row.
pub fn parse_conflict_csv(path: &Path) -> Result<Vec<ConflictEvent>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let display = path.display().to_string();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::MissingColumn { path: display.clone(), column: "lon".into() })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| -> Result<usize> {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::MissingColumn { path: display.clone(), column: name.into() })
    };
    let (lon_i, lat_i, deaths_i) = (col("lon")?, col("lat")?, col("deaths")?);

    let mut events = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let err = |column: usize, message: String| Error::ParseError {
            path: display.clone(),
            line: i + 1,
            column: column + 1,
            message,
        };
        let get = |idx: usize| fields.get(idx).copied().ok_or_else(|| err(idx, "missing field".into()));
        let lon: f64 = get(lon_i)?.parse().map_err(|_| err(lon_i, format!("bad lon {:?}", fields.get(lon_i))))?;
        let lat: f64 = get(lat_i)?.parse().map_err(|_| err(lat_i, format!("bad lat {:?}", fields.get(lat_i))))?;
        let deaths: u32 = get(deaths_i)?
            .parse()
            .map_err(|_| err(deaths_i, format!("bad deaths count {:?} (non-negative integer required)", fields.get(deaths_i))))?;
        let location = GeoPoint::new(lon, lat).map_err(|e| err(lon_i, e.to_string()))?;
        events.push(ConflictEvent { location, deaths });
    }
    Ok(events)
}

pub fn write_conflict_csv(path: &Path, events: &[ConflictEvent]) -> Result<()> {
    let mut s = String::from("lon,lat,deaths\n");
    for e in events {
        s.push_str(&format!("{},{},{}\n", e.location.lon, e.location.lat, e.deaths));
    }
    fs::write(path, s).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

// ── Tests ───────────────────────────────────────────────────────────────
