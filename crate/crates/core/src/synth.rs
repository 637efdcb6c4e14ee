//! Deterministic synthetic-country generator.
//!
//! Emits a complete layer set in the ingest formats: a border polygon,
//! hazard quads, road/waterway polylines, facility point layers, a
//! conflict-event CSV, elevation and population rasters, the catalog that
//! binds them, and a manifest recording the generative ground truth.
//!
//! Hazards are placed by rejection sampling with acceptance probability
//! `(1 - m) + m * A` where `m = 1 - exp(-strength)` and `A` blends
//! proximity to roads, proximity to conflict events and a moderate-slope
//! preference. Strength 0 therefore means uniform placement, and larger
//! strengths plant a signal that distance features can genuinely learn.
//! Half the buildings form tight halos just outside hazard boundaries, so
//! near-hazard terrain is infrastructure-rich rather than empty.
//!
//! One seeded RNG stream drives the whole build in a fixed order, making
//! a (config, seed) pair map to a byte-identical directory tree.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_3, PI, TAU};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geo::{
    point_in_polygon, GeoPoint, LocalFrame, PointFeature, PolygonFeature, PolylineFeature,
};
use crate::ingest::{
    write_conflict_csv, write_point_layer, write_polygon_layer, write_polyline_layer,
    ConflictEvent, GeometryKind, LayerBinding, LayerCatalog, RasterGrid, Role,
};
use crate::{derive_rng, Result};

/// Origin every generated world is centered on; an arbitrary mid-latitude
/// spot so longitude and latitude scales differ the way real data does.
const CENTER: (f64, f64) = (20.0, 35.0);

/// Length scale of the road and conflict proximity terms, in meters.
const PROXIMITY_SCALE_M: f64 = 1_500.0;

/// Weights of the planted-signal terms: road proximity, conflict
/// proximity, slope preference. They sum to 1 so the blend stays in [0, 1].
/// Roads dominate: contamination follows access corridors first.
const SIGNAL_WEIGHTS: (f64, f64, f64) = (0.60, 0.30, 0.10);

/// Rasters extend this far beyond the border bounding box on every side.
const RASTER_MARGIN_M: f64 = 8_000.0;

const NODATA: f64 = -9999.0;

const EDUCATION_TYPES: [(&str, f64); 2] = [("school", 0.8), ("university", 0.2)];
const AIRPORT_TYPES: [(&str, f64); 2] = [("airstrip", 0.7), ("international", 0.3)];
const HEALTH_TYPES: [(&str, f64); 2] = [("clinic", 0.7), ("hospital", 0.3)];
const AUTHORITIES: [&str; 2] = ["civil", "militia"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    /// Overall width of the country, rim to rim, in kilometers.
    pub side_km: f64,
    pub hazard_count: usize,
    pub building_count: usize,
    pub road_count: usize,
    pub waterway_count: usize,
    pub conflict_count: usize,
    pub financial_count: usize,
    pub education_count: usize,
    pub airport_count: usize,
    pub health_count: usize,
    pub controlled_area_count: usize,
    /// Planted-signal strength: 0 places hazards uniformly inside the
    /// border; larger values concentrate them near roads, conflict
    /// clusters and moderate slopes.
    pub strength: f64,
    /// Raster cell size in degrees.
    pub raster_cell_deg: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 7,
            side_km: 60.0,
            hazard_count: 500,
            building_count: 3000,
            road_count: 12,
            waterway_count: 6,
            conflict_count: 120,
            financial_count: 30,
            education_count: 40,
            airport_count: 3,
            health_count: 25,
            controlled_area_count: 3,
            strength: 4.0,
            raster_cell_deg: 0.004,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("hazard_count", self.hazard_count),
            ("building_count", self.building_count),
            ("road_count", self.road_count),
            ("waterway_count", self.waterway_count),
            ("conflict_count", self.conflict_count),
            ("financial_count", self.financial_count),
            ("education_count", self.education_count),
            ("airport_count", self.airport_count),
            ("health_count", self.health_count),
            ("controlled_area_count", self.controlled_area_count),
        ];
        for (name, n) in counts {
            if n < 1 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 1, got {n}")));
            }
        }
        if !(self.side_km.is_finite() && self.side_km > 0.0) {
            return Err(Error::InvalidParameter(format!("side_km must be > 0, got {}", self.side_km)));
        }
        if !(self.strength.is_finite() && self.strength >= 0.0) {
            return Err(Error::InvalidParameter(format!("strength must be >= 0, got {}", self.strength)));
        }
        if !(self.raster_cell_deg.is_finite() && self.raster_cell_deg > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "raster_cell_deg must be > 0, got {}",
                self.raster_cell_deg
            )));
        }
        Ok(())
    }
}

// ── Terrain and settlement skeleton ─────────────────────────────────────

/// One Gaussian hill; coordinates are local meters.
#[derive(Debug, Clone, Serialize)]
struct Bump {
    x: f64,
    y: f64,
    amp_m: f64,
    sigma_m: f64,
}

/// Analytic elevation surface: a base level plus Gaussian hills. Keeping
/// it analytic lets hazard placement use the exact slope rather than a
/// raster resample.
#[derive(Debug, Clone, Serialize)]
struct Terrain {
    base_m: f64,
    bumps: Vec<Bump>,
}

impl Terrain {
    fn sample(half_m: f64, rng: &mut ChaCha8Rng) -> Terrain {
        let bumps = (0..7)
            .map(|_| Bump {
                x: rng.gen_range(-0.8 * half_m..0.8 * half_m),
                y: rng.gen_range(-0.8 * half_m..0.8 * half_m),
                amp_m: rng.gen_range(60.0..350.0),
                sigma_m: rng.gen_range(2_500.0..9_000.0),
            })
            .collect();
        Terrain { base_m: 400.0, bumps }
    }

    fn elevation(&self, x: f64, y: f64) -> f64 {
        self.base_m
            + self
                .bumps
                .iter()
                .map(|b| {
                    let (dx, dy) = (x - b.x, y - b.y);
                    b.amp_m * (-(dx * dx + dy * dy) / (2.0 * b.sigma_m * b.sigma_m)).exp()
                })
                .sum::<f64>()
    }

    /// Slope in percent from the analytic gradient.
    fn slope_pct(&self, x: f64, y: f64) -> f64 {
        let (mut gx, mut gy) = (0.0, 0.0);
        for b in &self.bumps {
            let (dx, dy) = (x - b.x, y - b.y);
            let s2 = b.sigma_m * b.sigma_m;
            let g = b.amp_m * (-(dx * dx + dy * dy) / (2.0 * s2)).exp() / s2;
            gx -= g * dx;
            gy -= g * dy;
        }
        100.0 * gx.hypot(gy)
    }
}

/// Peaks at a moderate 6% slope, the terrain hazards favor. The band is
/// narrow (about two percentage points each side) so the preference marks
/// specific hillsides instead of raising a floor under the whole region.
fn slope_preference(slope_pct: f64) -> f64 {
    let d = slope_pct - 6.0;
    (-d * d / 8.0).exp()
}

/// A settlement cluster: buildings and facilities scatter around it, and
/// the population raster peaks on it.
#[derive(Debug, Clone, Serialize)]
struct City {
    x: f64,
    y: f64,
    sigma_m: f64,
    population_peak: f64,
}

fn make_cities(half_m: f64, rng: &mut ChaCha8Rng) -> Vec<City> {
    (0..4)
        .map(|_| City {
            x: rng.gen_range(-0.55 * half_m..0.55 * half_m),
            y: rng.gen_range(-0.55 * half_m..0.55 * half_m),
            sigma_m: rng.gen_range(1_500.0..3_000.0),
            population_peak: rng.gen_range(500.0..3_000.0),
        })
        .collect()
}

// ── Geometry helpers ────────────────────────────────────────────────────

fn attributes(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// (min_x, min_y, max_x, max_y) of a ring in local meters.
fn local_bbox(frame: &LocalFrame, ring: &[GeoPoint]) -> (f64, f64, f64, f64) {
    let mut b = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in ring {
        let (x, y) = frame.project(*p);
        b.0 = b.0.min(x);
        b.1 = b.1.min(y);
        b.2 = b.2.max(x);
        b.3 = b.3.max(y);
    }
    b
}

fn sample_in_border(
    frame: &LocalFrame,
    border: &PolygonFeature,
    bbox: (f64, f64, f64, f64),
    rng: &mut ChaCha8Rng,
) -> GeoPoint {
    loop {
        let x = rng.gen_range(bbox.0..bbox.2);
        let y = rng.gen_range(bbox.1..bbox.3);
        let p = frame.unproject(x, y);
        if point_in_polygon(p, border) {
            return p;
        }
    }
}

/// 16-gon with per-vertex radius jitter; stays star-shaped around the
/// origin so containment tests behave like a plain country outline.
fn make_border(frame: &LocalFrame, half_m: f64, rng: &mut ChaCha8Rng) -> Result<PolygonFeature> {
    let mut ring: Vec<GeoPoint> = (0..16)
        .map(|i| {
            let theta = TAU * i as f64 / 16.0;
            let r = half_m * rng.gen_range(0.82..0.98);
            frame.unproject(r * theta.cos(), r * theta.sin())
        })
        .collect();
    ring.push(ring[0]);
    PolygonFeature::new(ring, Vec::new(), attributes(&[("name", "synthland")]))
}

/// Polyline from `a` to `b` with sinusoidal cross-track wander, extended a
/// little past both endpoints.
fn wavy_line(
    frame: &LocalFrame,
    a: (f64, f64),
    b: (f64, f64),
    n: usize,
    jitter_m: f64,
    attrs: BTreeMap<String, String>,
    rng: &mut ChaCha8Rng,
) -> Result<PolylineFeature> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = dx.hypot(dy).max(1.0);
    let (nx, ny) = (-dy / len, dx / len);
    let freq: f64 = rng.gen_range(0.6..1.4);
    let phase: f64 = rng.gen_range(0.0..TAU);
    let second: f64 = rng.gen_range(0.2..0.6);
    let vertices = (0..n)
        .map(|i| {
            let t = -0.15 + 1.3 * i as f64 / (n - 1) as f64;
            let off = jitter_m * ((freq * PI * t).sin() + second * (2.0 * freq * PI * t + phase).sin());
            frame.unproject(a.0 + t * dx + off * nx, a.1 + t * dy + off * ny)
        })
        .collect();
    PolylineFeature::new(vertices, attrs)
}

fn make_roads(
    frame: &LocalFrame,
    cities: &[City],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PolylineFeature>> {
    (0..count)
        .map(|i| {
            let from = rng.gen_range(0..cities.len());
            let mut to = rng.gen_range(0..cities.len() - 1);
            if to >= from {
                to += 1;
            }
            let (a, b) = (&cities[from], &cities[to]);
            wavy_line(
                frame,
                (a.x, a.y),
                (b.x, b.y),
                24,
                rng.gen_range(250.0..700.0),
                attributes(&[("road_id", &i.to_string())]),
                rng,
            )
        })
        .collect()
}

fn make_waterways(
    frame: &LocalFrame,
    half_m: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PolylineFeature>> {
    (0..count)
        .map(|i| {
            let theta: f64 = rng.gen_range(0.0..TAU);
            let across = theta + PI + rng.gen_range(-0.6..0.6);
            let r = 0.95 * half_m;
            wavy_line(
                frame,
                (r * theta.cos(), r * theta.sin()),
                (r * across.cos(), r * across.sin()),
                30,
                rng.gen_range(400.0..1_100.0),
                attributes(&[("waterway_id", &i.to_string())]),
                rng,
            )
        })
        .collect()
}

/// Conflict events scatter around three flashpoints anchored on the road
/// network: fighting concentrates along the same corridors the hazards
/// follow, so the two proximity signals reinforce instead of competing.
fn make_conflicts(
    frame: &LocalFrame,
    roads: &[PolylineFeature],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<(f64, f64)>, Vec<ConflictEvent>) {
    let verts: Vec<(f64, f64)> = roads.iter().flat_map(|r| &r.vertices).map(|p| frame.project(*p)).collect();
    let centers: Vec<(f64, f64)> = (0..3)
        .map(|_| {
            let (ax, ay) = verts[rng.gen_range(0..verts.len())];
            (ax + rng.gen_range(-1_000.0..1_000.0), ay + rng.gen_range(-1_000.0..1_000.0))
        })
        .collect();
    let sigmas: Vec<f64> = centers.iter().map(|_| rng.gen_range(800.0..2_000.0)).collect();
    let events = (0..count)
        .map(|_| {
            let k = rng.gen_range(0..centers.len());
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            let location = frame.unproject(centers[k].0 + sigmas[k] * zx, centers[k].1 + sigmas[k] * zy);
            let deaths = 1 + (rng.gen::<f64>().powi(2) * 24.0) as u32;
            ConflictEvent { location, deaths }
        })
        .collect();
    (centers, events)
}

fn make_controlled_areas(
    frame: &LocalFrame,
    half_m: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PolygonFeature>> {
    (0..count)
        .map(|_| {
            let (cx, cy) = (rng.gen_range(-0.5 * half_m..0.5 * half_m), rng.gen_range(-0.5 * half_m..0.5 * half_m));
            let (hw, hh) = (rng.gen_range(3_000.0..8_000.0), rng.gen_range(3_000.0..8_000.0));
            let rot: f64 = rng.gen_range(0.0..TAU);
            let (c, s) = (rot.cos(), rot.sin());
            let mut ring: Vec<GeoPoint> = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
                .iter()
                .map(|(x, y)| frame.unproject(cx + c * x - s * y, cy + s * x + c * y))
                .collect();
            ring.push(ring[0]);
            let authority = AUTHORITIES[rng.gen_range(0..AUTHORITIES.len())];
            PolygonFeature::new(ring, Vec::new(), attributes(&[("authority", authority)]))
        })
        .collect()
}

// ── Hazard placement ────────────────────────────────────────────────────

fn nearest_distance(hubs: &[(f64, f64)], x: f64, y: f64) -> f64 {
    hubs.iter().map(|(hx, hy)| (x - hx).hypot(y - hy)).fold(f64::INFINITY, f64::min)
}

/// The planted signal `A` in [0, 1], blending road proximity, conflict
/// proximity and slope preference.
fn placement_score(terrain: &Terrain, roads: &[(f64, f64)], conflicts: &[(f64, f64)], x: f64, y: f64) -> f64 {
    let (wr, wc, ws) = SIGNAL_WEIGHTS;
    wr * (-nearest_distance(roads, x, y) / PROXIMITY_SCALE_M).exp()
        + wc * (-nearest_distance(conflicts, x, y) / PROXIMITY_SCALE_M).exp()
        + ws * slope_preference(terrain.slope_pct(x, y))
}

/// Parallelogram around (x, y): edge lengths 250-900 m, edge angle 60-120
/// degrees, so the corner-to-corner extent stays within 100-2000 m.
fn hazard_ring(frame: &LocalFrame, x: f64, y: f64, rng: &mut ChaCha8Rng) -> Vec<GeoPoint> {
    let lu: f64 = rng.gen_range(250.0..900.0);
    let lv: f64 = rng.gen_range(250.0..900.0);
    let theta: f64 = rng.gen_range(0.0..TAU);
    let phi = theta + rng.gen_range(FRAC_PI_3..2.0 * FRAC_PI_3);
    let (ux, uy) = (0.5 * lu * theta.cos(), 0.5 * lu * theta.sin());
    let (vx, vy) = (0.5 * lv * phi.cos(), 0.5 * lv * phi.sin());
    let mut ring: Vec<GeoPoint> = [
        (x - ux - vx, y - uy - vy),
        (x + ux - vx, y + uy - vy),
        (x + ux + vx, y + uy + vy),
        (x - ux + vx, y - uy + vy),
    ]
    .iter()
    .map(|(px, py)| frame.unproject(*px, *py))
    .collect();
    ring.push(ring[0]);
    ring
}

fn place_hazards(
    cfg: &WorldConfig,
    frame: &LocalFrame,
    border: &PolygonFeature,
    terrain: &Terrain,
    roads: &[PolylineFeature],
    conflicts: &[ConflictEvent],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PolygonFeature>> {
    let road_hubs: Vec<(f64, f64)> =
        roads.iter().flat_map(|r| r.vertices.iter()).map(|v| frame.project(*v)).collect();
    let conflict_hubs: Vec<(f64, f64)> = conflicts.iter().map(|e| frame.project(e.location)).collect();
    let bbox = local_bbox(frame, &border.exterior);
    let mix = 1.0 - (-cfg.strength).exp();

    let mut hazards = Vec::with_capacity(cfg.hazard_count);
    let mut attempts = 4_000usize.saturating_mul(cfg.hazard_count);
    while hazards.len() < cfg.hazard_count {
        if attempts == 0 {
            return Err(Error::InvalidParameter(
                "hazard placement did not converge; the border leaves too little room".into(),
            ));
        }
        attempts -= 1;
        let x = rng.gen_range(bbox.0..bbox.2);
        let y = rng.gen_range(bbox.1..bbox.3);
        if !point_in_polygon(frame.unproject(x, y), border) {
            continue;
        }
        let a = placement_score(terrain, &road_hubs, &conflict_hubs, x, y);
        if rng.gen::<f64>() >= (1.0 - mix) + mix * a {
            continue;
        }
        let ring = hazard_ring(frame, x, y, rng);
        if ring.iter().any(|v| !point_in_polygon(*v, border)) {
            continue;
        }
        let id = hazards.len().to_string();
        hazards.push(PolygonFeature::new(ring, Vec::new(), attributes(&[("hazard_id", &id)]))?);
    }
    Ok(hazards)
}

// ── Buildings and facilities ────────────────────────────────────────────

/// A point 25-100 m outside a random hazard edge, along its outward
/// perpendicular; this is what makes hazard surroundings look settled.
fn halo_point(
    frame: &LocalFrame,
    border: &PolygonFeature,
    bbox: (f64, f64, f64, f64),
    hazards: &[PolygonFeature],
    rng: &mut ChaCha8Rng,
) -> GeoPoint {
    for _ in 0..40 {
        let quad = &hazards[rng.gen_range(0..hazards.len())];
        let c: Vec<(f64, f64)> = quad.exterior[..4].iter().map(|v| frame.project(*v)).collect();
        let (cx, cy) = (c.iter().map(|p| p.0).sum::<f64>() / 4.0, c.iter().map(|p| p.1).sum::<f64>() / 4.0);
        let e = rng.gen_range(0..4);
        let (a, b) = (c[e], c[(e + 1) % 4]);
        let s = rng.gen_range(0.15..0.85);
        let (px, py) = (a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1));
        let elen = (b.0 - a.0).hypot(b.1 - a.1);
        let (mut nx, mut ny) = (-(b.1 - a.1) / elen, (b.0 - a.0) / elen);
        if nx * (px - cx) + ny * (py - cy) < 0.0 {
            nx = -nx;
            ny = -ny;
        }
        let r = rng.gen_range(25.0..100.0);
        let p = frame.unproject(px + r * nx, py + r * ny);
        if point_in_polygon(p, border) {
            return p;
        }
    }
    sample_in_border(frame, border, bbox, rng)
}

fn city_point(
    frame: &LocalFrame,
    border: &PolygonFeature,
    cities: &[City],
    rng: &mut ChaCha8Rng,
) -> GeoPoint {
    for _ in 0..40 {
        let city = &cities[rng.gen_range(0..cities.len())];
        let zx: f64 = rng.sample(StandardNormal);
        let zy: f64 = rng.sample(StandardNormal);
        let p = frame.unproject(city.x + city.sigma_m * zx, city.y + city.sigma_m * zy);
        if point_in_polygon(p, border) {
            return p;
        }
    }
    let city = &cities[rng.gen_range(0..cities.len())];
    frame.unproject(city.x, city.y)
}

fn make_buildings(
    cfg: &WorldConfig,
    frame: &LocalFrame,
    border: &PolygonFeature,
    bbox: (f64, f64, f64, f64),
    cities: &[City],
    hazards: &[PolygonFeature],
    rng: &mut ChaCha8Rng,
) -> Vec<PointFeature> {
    let n_halo = cfg.building_count / 2;
    let n_city = cfg.building_count * 35 / 100;
    let n_scatter = cfg.building_count - n_halo - n_city;
    let mut out = Vec::with_capacity(cfg.building_count);
    for _ in 0..n_halo {
        out.push(halo_point(frame, border, bbox, hazards, rng));
    }
    for _ in 0..n_city {
        out.push(city_point(frame, border, cities, rng));
    }
    for _ in 0..n_scatter {
        out.push(sample_in_border(frame, border, bbox, rng));
    }
    out.into_iter().map(|point| PointFeature { point, attributes: BTreeMap::new() }).collect()
}

fn pick_weighted<'a>(options: &[(&'a str, f64)], rng: &mut ChaCha8Rng) -> &'a str {
    let total: f64 = options.iter().map(|o| o.1).sum();
    let mut u = rng.gen::<f64>() * total;
    for (name, w) in options {
        u -= w;
        if u <= 0.0 {
            return name;
        }
    }
    options.last().expect("options non-empty").0
}

/// Facility layer: mostly near cities, the rest scattered, each point
/// optionally tagged with a weighted categorical attribute.
fn make_facilities(
    count: usize,
    category: Option<(&str, &[(&str, f64)])>,
    frame: &LocalFrame,
    border: &PolygonFeature,
    bbox: (f64, f64, f64, f64),
    cities: &[City],
    rng: &mut ChaCha8Rng,
) -> Vec<PointFeature> {
    (0..count)
        .map(|_| {
            let point = if rng.gen::<f64>() < 0.7 {
                city_point(frame, border, cities, rng)
            } else {
                sample_in_border(frame, border, bbox, rng)
            };
            let attributes = match category {
                Some((attr, options)) => attributes(&[(attr, pick_weighted(options, rng))]),
                None => BTreeMap::new(),
            };
            PointFeature { point, attributes }
        })
        .collect()
}

// ── Rasters ─────────────────────────────────────────────────────────────

fn rasterize(
    frame: &LocalFrame,
    border: &PolygonFeature,
    cell: f64,
    f: impl Fn(f64, f64) -> f64,
) -> RasterGrid {
    let (min_lon, min_lat, max_lon, max_lat) = border.bbox();
    let margin_lon = RASTER_MARGIN_M / frame.meters_per_deg_lon;
    let margin_lat = RASTER_MARGIN_M / frame.meters_per_deg_lat;
    let xllcorner = min_lon - margin_lon;
    let yllcorner = min_lat - margin_lat;
    let ncols = ((max_lon + margin_lon - xllcorner) / cell).ceil() as usize;
    let nrows = ((max_lat + margin_lat - yllcorner) / cell).ceil() as usize;
    let mut values = Vec::with_capacity(ncols * nrows);
    for row in 0..nrows {
        for col in 0..ncols {
            let lon = xllcorner + (col as f64 + 0.5) * cell;
            let lat = yllcorner + (nrows - row) as f64 * cell - 0.5 * cell;
            let (x, y) = frame.project(GeoPoint { lon, lat });
            values.push(f(x, y));
        }
    }
    RasterGrid { ncols, nrows, xllcorner, yllcorner, cellsize: cell, nodata: NODATA, values }
}

// ── Manifest and catalog ────────────────────────────────────────────────

/// Generative ground truth, written beside the layers so experiments can
/// check what the world actually planted.
#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a WorldConfig,
    center_lon: f64,
    center_lat: f64,
    proximity_scale_m: f64,
    signal_weights: [f64; 3],
    signal_mix: f64,
    terrain: &'a Terrain,
    cities: &'a [City],
    conflict_centers_m: &'a [(f64, f64)],
}

fn binding(path: &str, kind: GeometryKind) -> LayerBinding {
    LayerBinding { path: path.to_string(), kind, category_attribute: None, category_vocabulary: None }
}

fn categorical_binding(path: &str, kind: GeometryKind, attr: &str, options: &[(&str, f64)]) -> LayerBinding {
    LayerBinding {
        path: path.to_string(),
        kind,
        category_attribute: Some(attr.to_string()),
        category_vocabulary: Some(options.iter().map(|o| o.0.to_string()).collect()),
    }
}

fn make_catalog(out_dir: &Path) -> LayerCatalog {
    let mut roles = BTreeMap::new();
    roles.insert(Role::Border, binding("border.geojson", GeometryKind::Polygon));
    roles.insert(Role::Hazard, binding("hazards.geojson", GeometryKind::Polygon));
    roles.insert(Role::Building, binding("buildings.geojson", GeometryKind::Point));
    roles.insert(Role::Financial, binding("financial.geojson", GeometryKind::Point));
    roles.insert(
        Role::Education,
        categorical_binding("education.geojson", GeometryKind::Point, "type", &EDUCATION_TYPES),
    );
    roles.insert(
        Role::Airport,
        categorical_binding("airports.geojson", GeometryKind::Point, "type", &AIRPORT_TYPES),
    );
    roles.insert(
        Role::Health,
        categorical_binding("health.geojson", GeometryKind::Point, "type", &HEALTH_TYPES),
    );
    roles.insert(Role::Road, binding("roads.geojson", GeometryKind::Polyline));
    roles.insert(Role::Waterway, binding("waterways.geojson", GeometryKind::Polyline));
    roles.insert(Role::ControlledArea, {
        let options: Vec<(&str, f64)> = AUTHORITIES.iter().map(|a| (*a, 1.0)).collect();
        categorical_binding("controlled_areas.geojson", GeometryKind::Polygon, "authority", &options)
    });
    roles.insert(Role::Conflict, binding("conflict.csv", GeometryKind::EventCsv));
    roles.insert(Role::Population, binding("population.asc", GeometryKind::Raster));
    roles.insert(Role::Elevation, binding("elevation.asc", GeometryKind::Raster));
    LayerCatalog { roles, base_dir: out_dir.to_path_buf() }
}

// ── Generation ──────────────────────────────────────────────────────────

/// Builds a world from `cfg` and writes every layer, the catalog and the
/// manifest into `out_dir` (created if missing). Returns the catalog.
pub fn generate_world(cfg: &WorldConfig, out_dir: &Path) -> Result<LayerCatalog> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;

    let frame = LocalFrame::new(GeoPoint::new(CENTER.0, CENTER.1)?);
    let half_m = cfg.side_km * 500.0;
    let mut rng = derive_rng(cfg.seed, "synthworld", 0);

    // The build order below is part of the format: every layer draws from
    // one RNG stream, so reordering would change worlds under a fixed seed.
    let border = make_border(&frame, half_m, &mut rng)?;
    let bbox = local_bbox(&frame, &border.exterior);
    let terrain = Terrain::sample(half_m, &mut rng);
    let cities = make_cities(half_m, &mut rng);
    let roads = make_roads(&frame, &cities, cfg.road_count, &mut rng)?;
    let waterways = make_waterways(&frame, half_m, cfg.waterway_count, &mut rng)?;
    let (conflict_centers, conflicts) = make_conflicts(&frame, &roads, cfg.conflict_count, &mut rng);
    let controlled = make_controlled_areas(&frame, half_m, cfg.controlled_area_count, &mut rng)?;
    let hazards = place_hazards(cfg, &frame, &border, &terrain, &roads, &conflicts, &mut rng)?;
    let buildings = make_buildings(cfg, &frame, &border, bbox, &cities, &hazards, &mut rng);
    let financial = make_facilities(cfg.financial_count, None, &frame, &border, bbox, &cities, &mut rng);
    let education = make_facilities(
        cfg.education_count,
        Some(("type", &EDUCATION_TYPES)),
        &frame,
        &border,
        bbox,
        &cities,
        &mut rng,
    );
    let airports = make_facilities(
        cfg.airport_count,
        Some(("type", &AIRPORT_TYPES)),
        &frame,
        &border,
        bbox,
        &cities,
        &mut rng,
    );
    let health = make_facilities(
        cfg.health_count,
        Some(("type", &HEALTH_TYPES)),
        &frame,
        &border,
        bbox,
        &cities,
        &mut rng,
    );

    let elevation = rasterize(&frame, &border, cfg.raster_cell_deg, |x, y| terrain.elevation(x, y));
    let population = rasterize(&frame, &border, cfg.raster_cell_deg, |x, y| {
        2.0 + cities
            .iter()
            .map(|c| {
                let d2 = (x - c.x).powi(2) + (y - c.y).powi(2);
                let s = 1.6 * c.sigma_m;
                c.population_peak * (-d2 / (2.0 * s * s)).exp()
            })
            .sum::<f64>()
    });

    write_polygon_layer(&out_dir.join("border.geojson"), std::slice::from_ref(&border))?;
    write_polygon_layer(&out_dir.join("hazards.geojson"), &hazards)?;
    write_polyline_layer(&out_dir.join("roads.geojson"), &roads)?;
    write_polyline_layer(&out_dir.join("waterways.geojson"), &waterways)?;
    write_polygon_layer(&out_dir.join("controlled_areas.geojson"), &controlled)?;
    write_point_layer(&out_dir.join("buildings.geojson"), &buildings)?;
    write_point_layer(&out_dir.join("financial.geojson"), &financial)?;
    write_point_layer(&out_dir.join("education.geojson"), &education)?;
    write_point_layer(&out_dir.join("airports.geojson"), &airports)?;
    write_point_layer(&out_dir.join("health.geojson"), &health)?;
    write_conflict_csv(&out_dir.join("conflict.csv"), &conflicts)?;
    elevation.write_ascii_grid(&out_dir.join("elevation.asc"))?;
    population.write_ascii_grid(&out_dir.join("population.asc"))?;

    let catalog = make_catalog(out_dir);
    catalog.save(&out_dir.join("catalog.json"))?;

    let manifest = Manifest {
        config: cfg,
        center_lon: CENTER.0,
        center_lat: CENTER.1,
        proximity_scale_m: PROXIMITY_SCALE_M,
        signal_weights: [SIGNAL_WEIGHTS.0, SIGNAL_WEIGHTS.1, SIGNAL_WEIGHTS.2],
        signal_mix: 1.0 - (-cfg.strength).exp(),
        terrain: &terrain,
        cities: &cities,
        conflict_centers_m: &conflict_centers,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, text).map_err(|e| Error::io(format!("writing {}", manifest_path.display()), e))?;

    Ok(catalog)
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::roc_auc;
    use crate::features::{featurize_point, prepare_layers, FeatureSchema, FeatureSet};
    use crate::geo::{haversine_distance, polygon_centroid};
    use crate::ingest::parse_geojson_layer;

    fn small(seed: u64) -> WorldConfig {
        WorldConfig {
            seed,
            side_km: 30.0,
            hazard_count: 50,
            building_count: 240,
            road_count: 5,
            waterway_count: 3,
            conflict_count: 30,
            financial_count: 6,
            education_count: 8,
            airport_count: 2,
            health_count: 6,
            controlled_area_count: 2,
            strength: 3.5,
            raster_cell_deg: 0.01,
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        let mut cfg = small(1);
        cfg.hazard_count = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small(1);
        cfg.side_km = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small(1);
        cfg.strength = -0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = small(1);
        cfg.raster_cell_deg = 0.0;
        assert!(cfg.validate().is_err());
        assert!(WorldConfig::default().validate().is_ok());
    }

    #[test]
    fn same_config_writes_byte_identical_trees() {
        let cfg = small(11);
        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_world(&cfg, da.path()).unwrap();
        generate_world(&cfg, db.path()).unwrap();

        let names = |dir: &Path| -> Vec<String> {
            let mut v: Vec<String> = fs::read_dir(dir)
                .unwrap()
                .map(|e| e.unwrap().file_name().into_string().unwrap())
                .collect();
            v.sort();
            v
        };
        let files = names(da.path());
        assert_eq!(files, names(db.path()));
        assert!(files.contains(&"catalog.json".to_string()));
        assert!(files.contains(&"manifest.json".to_string()));
        for name in &files {
            let a = fs::read(da.path().join(name)).unwrap();
            let b = fs::read(db.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn hazards_sit_inside_the_border_with_bounded_extent() {
        let dir = tempfile::tempdir().unwrap();
        generate_world(&small(3), dir.path()).unwrap();
        let border =
            parse_geojson_layer(&dir.path().join("border.geojson"), GeometryKind::Polygon).unwrap().into_polygons();
        let hazards =
            parse_geojson_layer(&dir.path().join("hazards.geojson"), GeometryKind::Polygon).unwrap().into_polygons();
        assert_eq!(hazards.len(), 50);
        for quad in &hazards {
            assert_eq!(quad.exterior.len(), 5);
            for v in &quad.exterior {
                assert!(point_in_polygon(*v, &border[0]));
            }
            let corners = &quad.exterior[..4];
            let mut extent: f64 = 0.0;
            for i in 0..4 {
                for j in i + 1..4 {
                    extent = extent.max(haversine_distance(corners[i], corners[j]));
                }
            }
            assert!((100.0..=2000.0).contains(&extent), "extent {extent}");
        }
    }

    #[test]
    fn buildings_stay_inside_and_cluster_on_hazard_boundaries() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(5);
        generate_world(&cfg, dir.path()).unwrap();
        let border =
            parse_geojson_layer(&dir.path().join("border.geojson"), GeometryKind::Polygon).unwrap().into_polygons();
        let hazards =
            parse_geojson_layer(&dir.path().join("hazards.geojson"), GeometryKind::Polygon).unwrap().into_polygons();
        let buildings =
            parse_geojson_layer(&dir.path().join("buildings.geojson"), GeometryKind::Point).unwrap().into_points();
        assert_eq!(buildings.len(), cfg.building_count);

        let mut near_hazard = 0;
        for b in &buildings {
            assert!(point_in_polygon(b.point, &border[0]));
            let d = hazards
                .iter()
                .flat_map(|h| h.exterior[..4].iter())
                .map(|v| haversine_distance(b.point, *v))
                .fold(f64::INFINITY, f64::min);
            if d < 600.0 {
                near_hazard += 1;
            }
        }
        // every halo building sits within ~(half edge + 100 m) of a corner
        assert!(near_hazard >= cfg.building_count / 3, "only {near_hazard} near hazards");
    }

    fn sigmoid(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    /// Nearest-road-vertex distances for hazard centroids (label 1) and
    /// uniform background points (label 0).
    fn road_distance_dataset(dir: &Path, bg_seed: u64) -> (Vec<u8>, Vec<f64>) {
        let border =
            parse_geojson_layer(&dir.join("border.geojson"), GeometryKind::Polygon).unwrap().into_polygons();
        let hazards =
            parse_geojson_layer(&dir.join("hazards.geojson"), GeometryKind::Polygon).unwrap().into_polygons();
        let roads =
            parse_geojson_layer(&dir.join("roads.geojson"), GeometryKind::Polyline).unwrap().into_polylines();
        let hubs: Vec<GeoPoint> = roads.iter().flat_map(|r| r.vertices.iter().copied()).collect();
        let d_road = |p: GeoPoint| hubs.iter().map(|h| haversine_distance(p, *h)).fold(f64::INFINITY, f64::min);

        let frame = LocalFrame::new(GeoPoint::new(CENTER.0, CENTER.1).unwrap());
        let bbox = local_bbox(&frame, &border[0].exterior);
        let mut rng = derive_rng(bg_seed, "synth_background", 0);
        let mut labels = Vec::new();
        let mut dists = Vec::new();
        for quad in &hazards {
            labels.push(1);
            dists.push(d_road(polygon_centroid(quad).unwrap()));
        }
        for _ in 0..hazards.len() {
            labels.push(0);
            dists.push(d_road(sample_in_border(&frame, &border[0], bbox, &mut rng)));
        }
        (labels, dists)
    }

    #[test]
    fn logistic_fit_recovers_a_negative_road_coefficient() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = WorldConfig {
            seed: 17,
            hazard_count: 500,
            building_count: 150,
            conflict_count: 80,
            road_count: 10,
            raster_cell_deg: 0.02,
            strength: 5.0,
            ..small(17)
        };
        generate_world(&cfg, dir.path()).unwrap();
        let (labels, dists) = road_distance_dataset(dir.path(), 23);

        let n = dists.len() as f64;
        let mean = dists.iter().sum::<f64>() / n;
        let sd = (dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        let x: Vec<f64> = dists.iter().map(|d| (d - mean) / sd).collect();

        // Newton iterations on the two-parameter logistic log-loss.
        let (mut b0, mut b1) = (0.0f64, 0.0f64);
        for _ in 0..30 {
            let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (xi, yi) in x.iter().zip(&labels) {
                let p = sigmoid(b0 + b1 * xi);
                let r = p - *yi as f64;
                let w = p * (1.0 - p);
                g0 += r;
                g1 += r * xi;
                h00 += w;
                h01 += w * xi;
                h11 += w * xi * xi;
            }
            let det = h00 * h11 - h01 * h01 + 1e-12;
            b0 -= (h11 * g0 - h01 * g1) / det;
            b1 -= (h00 * g1 - h01 * g0) / det;
        }
        assert!(b1 < -0.1, "road coefficient {b1} is not meaningfully negative");
    }

    #[test]
    fn road_signal_auc_grows_with_strength() {
        let aucs: Vec<f64> = [0.0, 2.0, 6.0]
            .iter()
            .map(|&strength| {
                let dir = tempfile::tempdir().unwrap();
                // two roads keep most of the world far from any corridor,
                // so the road channel alone has room to rank
                let cfg =
                    WorldConfig { seed: 21, hazard_count: 150, road_count: 2, strength, ..small(21) };
                generate_world(&cfg, dir.path()).unwrap();
                let (labels, dists) = road_distance_dataset(dir.path(), 29);
                let scores: Vec<f64> = dists.iter().map(|d| -d).collect();
                roc_auc(&labels, &scores).unwrap().1
            })
            .collect();
        assert!((aucs[0] - 0.5).abs() < 0.1, "strength 0 should carry no signal, auc {}", aucs[0]);
        assert!(aucs[0] < aucs[1] && aucs[1] < aucs[2], "aucs not increasing: {aucs:?}");
        assert!(aucs[2] > 0.7, "strong planting too weak, auc {}", aucs[2]);
    }

    #[test]
    fn generated_layers_load_through_catalog_and_featurizer() {
        let dir = tempfile::tempdir().unwrap();
        generate_world(&small(9), dir.path()).unwrap();
        let catalog = LayerCatalog::load(&dir.path().join("catalog.json")).unwrap();
        catalog.validate_paths().unwrap();
        let layers = prepare_layers(&catalog).unwrap();
        let schema = FeatureSchema::new(FeatureSet::Expanded18, &layers);
        assert_eq!(schema.len(), 18);
        let education = schema.features.iter().find(|f| f.name == "education_type").unwrap();
        assert_eq!(education.vocabulary.as_deref().unwrap(), ["unknown", "school", "university"]);

        let hazards =
            parse_geojson_layer(&dir.path().join("hazards.geojson"), GeometryKind::Polygon).unwrap().into_polygons();
        let probe = polygon_centroid(&hazards[0]).unwrap();
        let row = featurize_point(probe, &layers, &schema).unwrap();
        assert_eq!(row.len(), 18);
        assert!(row.iter().all(|v| v.is_finite()));
    }
}
