//! Geodesic primitives shared by every other module: WGS84 points, polygon
//! and polyline features, great-circle distance on a spherical Earth, an
//! equirectangular local frame for metric constructions, containment tests,
//! centroids and buffer-ring chainage points.
//!
//! All distances are meters. Coordinates are (lon, lat) in degrees.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Spherical Earth radius used by every distance in the pipeline.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters per degree of latitude on the spherical Earth (~111.19 km).
pub const METERS_PER_DEG_LAT: f64 = EARTH_RADIUS_M * PI / 180.0;

// ── Points ──────────────────────────────────────────────────────────────

/// A WGS84 position. `lon` in [-180, 180], `lat` in [-90, 90], both finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    /// Validated constructor; the pipeline builds all external data through
    /// this so downstream math can assume finite in-range coordinates.
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() || !lat.is_finite() || !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidCoordinate { lon, lat });
        }
        Ok(GeoPoint { lon, lat })
    }
}

/// A point feature with its attribute table (values kept as strings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFeature {
    pub point: GeoPoint,
    pub attributes: BTreeMap<String, String>,
}

// ── Polygons and polylines ──────────────────────────────────────────────

/// A polygon with an exterior ring and optional holes. Rings are stored
/// closed (first vertex repeated last) with at least four entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonFeature {
    pub exterior: Vec<GeoPoint>,
    pub holes: Vec<Vec<GeoPoint>>,
    pub attributes: BTreeMap<String, String>,
}

impl PolygonFeature {
    pub fn new(
        exterior: Vec<GeoPoint>,
        holes: Vec<Vec<GeoPoint>>,
        attributes: BTreeMap<String, String>,
    ) -> Result<Self> {
        validate_ring(&exterior)?;
        for h in &holes {
            validate_ring(h)?;
        }
        Ok(PolygonFeature { exterior, holes, attributes })
    }

    /// Axis-aligned bounds of the exterior ring as
    /// (min_lon, min_lat, max_lon, max_lat).
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in &self.exterior {
            b.0 = b.0.min(p.lon);
            b.1 = b.1.min(p.lat);
            b.2 = b.2.max(p.lon);
            b.3 = b.3.max(p.lat);
        }
        b
    }
}

fn validate_ring(ring: &[GeoPoint]) -> Result<()> {
    if ring.len() < 4 {
        return Err(Error::DegenerateGeometry(format!("ring has {} vertices, need >= 4 (closed)", ring.len())));
    }
    if ring.first() != ring.last() {
        return Err(Error::DegenerateGeometry("ring is not closed (first != last)".into()));
    }
    Ok(())
}

/// An open polyline with at least two vertices; consecutive vertices are
/// distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolylineFeature {
    pub vertices: Vec<GeoPoint>,
    pub attributes: BTreeMap<String, String>,
}

impl PolylineFeature {
    pub fn new(vertices: Vec<GeoPoint>, attributes: BTreeMap<String, String>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::DegenerateGeometry(format!("polyline has {} vertices, need >= 2", vertices.len())));
        }
        if vertices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::DegenerateGeometry("polyline has duplicate consecutive vertices".into()));
        }
        Ok(PolylineFeature { vertices, attributes })
    }
}

// ── Local frame ─────────────────────────────────────────────────────────

/// Equirectangular projection around an origin: x grows east, y grows
/// north, both in meters. Scale is exact along the origin parallel and
/// meridians; it is the frame every buffer, centroid and planar check in
/// the pipeline uses, so results are consistent across modules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    pub origin: GeoPoint,
    pub meters_per_deg_lon: f64,
    pub meters_per_deg_lat: f64,
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Self {
        let meters_per_deg_lat = METERS_PER_DEG_LAT;
        LocalFrame {
            origin,
            meters_per_deg_lon: meters_per_deg_lat * origin.lat.to_radians().cos(),
            meters_per_deg_lat,
        }
    }

    /// Frame centered on the bounding-box center of `points`.
    pub fn for_points<'a>(points: impl Iterator<Item = &'a GeoPoint>) -> Self {
        let mut b = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in points {
            b.0 = b.0.min(p.lon);
            b.1 = b.1.min(p.lat);
            b.2 = b.2.max(p.lon);
            b.3 = b.3.max(p.lat);
        }
        LocalFrame::new(GeoPoint { lon: (b.0 + b.2) * 0.5, lat: (b.1 + b.3) * 0.5 })
    }

    pub fn project(&self, p: GeoPoint) -> (f64, f64) {
        (
            (p.lon - self.origin.lon) * self.meters_per_deg_lon,
            (p.lat - self.origin.lat) * self.meters_per_deg_lat,
        )
    }

    pub fn unproject(&self, x: f64, y: f64) -> GeoPoint {
        GeoPoint {
            lon: self.origin.lon + x / self.meters_per_deg_lon,
            lat: self.origin.lat + y / self.meters_per_deg_lat,
        }
    }
}

// ── Distance ────────────────────────────────────────────────────────────

/// Great-circle distance in meters via the haversine formula.
///
/// Coordinate deltas enter through `abs`, so the result is bit-identical
/// under argument swap; the argument of `asin` is clamped so antipodal
/// rounding noise cannot leave the domain.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let dlat = (a.lat - b.lat).abs().to_radians();
    let dlon = (a.lon - b.lon).abs().to_radians();
    let s_lat = (dlat * 0.5).sin();
    let s_lon = (dlon * 0.5).sin();
    let h = s_lat * s_lat + a.lat.to_radians().cos() * b.lat.to_radians().cos() * s_lon * s_lon;
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

// ── Containment ─────────────────────────────────────────────────────────

/// Even-odd containment test in lon/lat space. Points exactly on a ring
/// segment (exterior or hole boundary) count as inside.
pub fn point_in_polygon(p: GeoPoint, poly: &PolygonFeature) -> bool {
    if on_ring_boundary(p, &poly.exterior) || poly.holes.iter().any(|h| on_ring_boundary(p, h)) {
        return true;
    }
    let mut crossings = ray_crossings(p, &poly.exterior);
    for h in &poly.holes {
        crossings += ray_crossings(p, h);
    }
    crossings % 2 == 1
}

fn on_ring_boundary(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    ring.windows(2).any(|w| {
        let (ax, ay) = (w[0].lon, w[0].lat);
        let (bx, by) = (w[1].lon, w[1].lat);
        let cross = (bx - ax) * (p.lat - ay) - (by - ay) * (p.lon - ax);
        cross == 0.0
            && p.lon >= ax.min(bx)
            && p.lon <= ax.max(bx)
            && p.lat >= ay.min(by)
            && p.lat <= ay.max(by)
    })
}

/// Half-open crossing rule: an eastward ray from `p`; edges are counted
/// when they span p.lat as (lo, hi], which handles vertices hit exactly.
fn ray_crossings(p: GeoPoint, ring: &[GeoPoint]) -> usize {
    let mut count = 0;
    for w in ring.windows(2) {
        let (ax, ay) = (w[0].lon, w[0].lat);
        let (bx, by) = (w[1].lon, w[1].lat);
        if (ay > p.lat) != (by > p.lat) {
            let t = (p.lat - ay) / (by - ay);
            if p.lon < ax + t * (bx - ax) {
                count += 1;
            }
        }
    }
    count
}

// ── Centroid ────────────────────────────────────────────────────────────

/// Area centroid computed by the shoelace formula in the polygon's local
/// frame; holes subtract their area-weighted centroids. Because the frame
/// is a diagonal linear map of (lon, lat), the result is exact in degrees.
pub fn polygon_centroid(poly: &PolygonFeature) -> Result<GeoPoint> {
    let frame = LocalFrame::for_points(poly.exterior.iter());
    let (area_ext, cx_ext, cy_ext) = ring_area_centroid(&poly.exterior, &frame);
    let mut net_area = area_ext.abs();
    let mut cx = cx_ext * area_ext.abs();
    let mut cy = cy_ext * area_ext.abs();
    for h in &poly.holes {
        let (a, hx, hy) = ring_area_centroid(h, &frame);
        net_area -= a.abs();
        cx -= hx * a.abs();
        cy -= hy * a.abs();
    }
    if net_area < 1e-9 {
        return Err(Error::DegenerateGeometry(format!("polygon area {net_area:.3e} m^2 below 1e-9")));
    }
    Ok(frame.unproject(cx / net_area, cy / net_area))
}

/// Signed area (m^2) and centroid of one closed ring in `frame`.
fn ring_area_centroid(ring: &[GeoPoint], frame: &LocalFrame) -> (f64, f64, f64) {
    let pts: Vec<(f64, f64)> = ring.iter().map(|p| frame.project(*p)).collect();
    let mut a2 = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for w in pts.windows(2) {
        let cross = w[0].0 * w[1].1 - w[1].0 * w[0].1;
        a2 += cross;
        cx += (w[0].0 + w[1].0) * cross;
        cy += (w[0].1 + w[1].1) * cross;
    }
    let area = a2 * 0.5;
    if area == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    (area, cx / (3.0 * a2), cy / (3.0 * a2))
}

// ── Vertex extraction ───────────────────────────────────────────────────

/// Ordered vertices of a polyline, with the duplicated closing vertex of a
/// ring-shaped input dropped. These vertices are the distance hubs for
/// line layers.
pub fn extract_vertices(line: &PolylineFeature) -> Vec<GeoPoint> {
    let mut v = line.vertices.clone();
    if v.len() > 2 && v.first() == v.last() {
        v.pop();
    }
    v
}

// ── Buffer chainage ─────────────────────────────────────────────────────

/// Points spaced every `spacing_m` along the ring at `distance_m` outside
/// the polygon's exterior.
///
/// The ring is the exact offset curve: edges translated outward joined by
/// circular arcs around convex vertices. Every candidate is re-measured
/// against the boundary in the polygon's local frame and dropped unless its
/// distance is within 1% of `distance_m` and it lies outside the polygon,
/// which keeps concave rings honest.
pub fn buffer_chainage_points(
    poly: &PolygonFeature,
    distance_m: f64,
    spacing_m: f64,
) -> Result<Vec<GeoPoint>> {
    if !(distance_m > 0.0) {
        return Err(Error::InvalidParameter(format!("buffer distance must be > 0, got {distance_m}")));
    }
    if !(spacing_m > 0.0) {
        return Err(Error::InvalidParameter(format!("chainage spacing must be > 0, got {spacing_m}")));
    }
    let frame = LocalFrame::for_points(poly.exterior.iter());
    let mut ring: Vec<(f64, f64)> = poly.exterior[..poly.exterior.len() - 1]
        .iter()
        .map(|p| frame.project(*p))
        .collect();
    let area2: f64 = closed_shoelace2(&ring);
    if area2.abs() * 0.5 < 1e-9 {
        return Err(Error::DegenerateGeometry("cannot buffer a near-zero-area polygon".into()));
    }
    if area2 < 0.0 {
        ring.reverse(); // normalize to counterclockwise so outward is to the right of travel
    }
    let n = ring.len();

    // Offset path pieces: one translated segment per edge, one arc per
    // convex vertex. Reflex vertices get no join; their neighborhood is
    // cleaned up by the distance filter below.
    enum Piece {
        Seg { ax: f64, ay: f64, bx: f64, by: f64, len: f64 },
        Arc { cx: f64, cy: f64, start: f64, sweep: f64, len: f64 },
    }
    let mut pieces: Vec<Piece> = Vec::with_capacity(2 * n);
    let edge = |i: usize| {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len = (dx * dx + dy * dy).sqrt();
        (a, b, dx / len, dy / len, len)
    };
    for i in 0..n {
        let (a, b, ux, uy, len) = edge(i);
        let (nx, ny) = (uy, -ux); // right-of-travel normal = outward for CCW
        pieces.push(Piece::Seg {
            ax: a.0 + nx * distance_m,
            ay: a.1 + ny * distance_m,
            bx: b.0 + nx * distance_m,
            by: b.1 + ny * distance_m,
            len,
        });
        // join at vertex (i+1): arc only where the travel turns left (convex)
        let (_, _, vx, vy, _) = edge((i + 1) % n);
        let cross = ux * vy - uy * vx;
        if cross > 0.0 {
            let start = (-ux).atan2(uy); // angle of (uy, -ux)
            let end = (-vx).atan2(vy);
            let mut sweep = end - start;
            while sweep < 0.0 {
                sweep += 2.0 * PI;
            }
            while sweep >= 2.0 * PI {
                sweep -= 2.0 * PI;
            }
            let v = ring[(i + 1) % n];
            pieces.push(Piece::Arc { cx: v.0, cy: v.1, start, sweep, len: sweep * distance_m });
        }
    }

    let total: f64 = pieces
        .iter()
        .map(|p| match p {
            Piece::Seg { len, .. } | Piece::Arc { len, .. } => *len,
        })
        .sum();

    // Walk the ring emitting a candidate every spacing_m of arc length.
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    let mut next_s = 0.0;
    let mut offset = 0.0;
    for p in &pieces {
        let len = match p {
            Piece::Seg { len, .. } | Piece::Arc { len, .. } => *len,
        };
        while next_s < offset + len && next_s < total {
            let t = (next_s - offset) / len;
            let pt = match p {
                Piece::Seg { ax, ay, bx, by, .. } => (ax + (bx - ax) * t, ay + (by - ay) * t),
                Piece::Arc { cx, cy, start, sweep, .. } => {
                    let ang = start + sweep * t;
                    (cx + distance_m * ang.cos(), cy + distance_m * ang.sin())
                }
            };
            candidates.push(pt);
            next_s += spacing_m;
        }
        offset += len;
    }

    let tol = 0.01 * distance_m;
    let mut out = Vec::with_capacity(candidates.len());
    for (x, y) in candidates {
        let d = ring_distance(x, y, &ring);
        if (d - distance_m).abs() <= tol {
            let gp = frame.unproject(x, y);
            if !point_in_polygon(gp, poly) {
                out.push(gp);
            }
        }
    }
    Ok(out)
}

/// Shortest distance in meters from `p` to the polygon's exterior ring,
/// measured in the polygon's local frame. Zero on the boundary; positive
/// on both sides.
pub fn boundary_distance_m(poly: &PolygonFeature, p: GeoPoint) -> f64 {
    let frame = LocalFrame::for_points(poly.exterior.iter());
    let ring: Vec<(f64, f64)> =
        poly.exterior[..poly.exterior.len() - 1].iter().map(|q| frame.project(*q)).collect();
    let (x, y) = frame.project(p);
    ring_distance(x, y, &ring)
}

fn closed_shoelace2(ring: &[(f64, f64)]) -> f64 {
    let n = ring.len();
    let mut a2 = 0.0;
    for i in 0..n {
        let (x0, y0) = ring[i];
        let (x1, y1) = ring[(i + 1) % n];
        a2 += x0 * y1 - x1 * y0;
    }
    a2
}

/// Shortest planar distance from (x, y) to the closed ring's edges.
fn ring_distance(x: f64, y: f64, ring: &[(f64, f64)]) -> f64 {
    let n = ring.len();
    let mut best = f64::MAX;
    for i in 0..n {
        let (ax, ay) = ring[i];
        let (bx, by) = ring[(i + 1) % n];
        let (ex, ey) = (bx - ax, by - ay);
        let t = (((x - ax) * ex + (y - ay) * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
        let (px, py) = (ax + t * ex, ay + t * ey);
        let d2 = (x - px) * (x - px) + (y - py) * (y - py);
        if d2 < best {
            best = d2;
        }
    }
    best.sqrt()
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pt(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint::new(lon, lat).unwrap()
    }

    fn square(min_lon: f64, min_lat: f64, side_deg: f64) -> PolygonFeature {
        PolygonFeature::new(
            vec![
                pt(min_lon, min_lat),
                pt(min_lon + side_deg, min_lat),
                pt(min_lon + side_deg, min_lat + side_deg),
                pt(min_lon, min_lat + side_deg),
                pt(min_lon, min_lat),
            ],
            vec![],
            BTreeMap::new(),
        )
        .unwrap()
    }

    /// Square with the given side length in meters, centered on `center`.
    fn metric_square(center: GeoPoint, side_m: f64) -> PolygonFeature {
        let f = LocalFrame::new(center);
        let h = side_m * 0.5;
        let c = [(-h, -h), (h, -h), (h, h), (-h, h), (-h, -h)];
        PolygonFeature::new(
            c.iter().map(|&(x, y)| f.unproject(x, y)).collect(),
            vec![],
            BTreeMap::new(),
        )
        .unwrap()
    }

    // Independent route: spherical law of cosines.
    fn law_of_cosines_distance(a: GeoPoint, b: GeoPoint) -> f64 {
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (a.lon - b.lon).to_radians();
        let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
        EARTH_RADIUS_M * c.acos()
    }

    // Independent route: winding number containment (boundary handled by
    // the same exact on-segment test as the implementation).
    fn winding_number_contains(p: GeoPoint, poly: &PolygonFeature) -> bool {
        if on_ring_boundary(p, &poly.exterior) || poly.holes.iter().any(|h| on_ring_boundary(p, h)) {
            return true;
        }
        let wind = |ring: &[GeoPoint]| -> i32 {
            let mut w = 0;
            for seg in ring.windows(2) {
                let (a, b) = (seg[0], seg[1]);
                let is_left = (b.lon - a.lon) * (p.lat - a.lat) - (p.lon - a.lon) * (b.lat - a.lat);
                if a.lat <= p.lat {
                    if b.lat > p.lat && is_left > 0.0 {
                        w += 1;
                    }
                } else if b.lat <= p.lat && is_left < 0.0 {
                    w -= 1;
                }
            }
            w
        };
        let mut inside = wind(&poly.exterior) != 0;
        for h in &poly.holes {
            if wind(h) != 0 {
                inside = !inside;
            }
        }
        inside
    }

    #[test]
    fn haversine_zero_for_identical_points() {
        let p = pt(10.0, 34.0);
        assert_eq!(haversine_distance(p, p), 0.0);
    }

    #[test]
    fn haversine_one_degree_at_equator() {
        let d = haversine_distance(pt(0.0, 0.0), pt(1.0, 0.0));
        assert!((d - 111_194.93).abs() < 0.01, "got {d}");
    }

    #[test]
    fn haversine_matches_law_of_cosines_on_random_pairs() {
        let mut rng = crate::derive_rng(11, "geo_oracle", 0);
        for _ in 0..100 {
            let a = pt(rng.gen_range(-170.0..170.0), rng.gen_range(-80.0..80.0));
            let b = pt(
                (a.lon + rng.gen_range(0.1..20.0)).clamp(-180.0, 180.0),
                (a.lat + rng.gen_range(0.1..8.0)).clamp(-90.0, 90.0),
            );
            let h = haversine_distance(a, b);
            let o = law_of_cosines_distance(a, b);
            assert!((h - o).abs() / o < 1e-6, "haversine {h} vs oracle {o}");
        }
    }

    #[test]
    fn haversine_is_symmetric_bitwise() {
        let mut rng = crate::derive_rng(12, "geo_sym", 0);
        for _ in 0..200 {
            let a = pt(rng.gen_range(-179.0..179.0), rng.gen_range(-89.0..89.0));
            let b = pt(rng.gen_range(-179.0..179.0), rng.gen_range(-89.0..89.0));
            assert_eq!(haversine_distance(a, b).to_bits(), haversine_distance(b, a).to_bits());
        }
    }

    #[test]
    fn containment_unit_square_boundary_counts_inside() {
        let sq = square(0.0, 0.0, 1.0);
        assert!(point_in_polygon(pt(0.5, 0.5), &sq)); // interior
        assert!(point_in_polygon(pt(0.0, 0.0), &sq)); // corner
        assert!(point_in_polygon(pt(0.5, 0.0), &sq)); // edge midpoint
        assert!(!point_in_polygon(pt(1.5, 0.5), &sq));
        assert!(!point_in_polygon(pt(0.5, -0.0001), &sq));
    }

    #[test]
    fn containment_respects_holes() {
        let mut poly = square(0.0, 0.0, 1.0);
        poly.holes.push(vec![
            pt(0.25, 0.25),
            pt(0.75, 0.25),
            pt(0.75, 0.75),
            pt(0.25, 0.75),
            pt(0.25, 0.25),
        ]);
        assert!(!point_in_polygon(pt(0.5, 0.5), &poly)); // inside the hole
        assert!(point_in_polygon(pt(0.1, 0.5), &poly)); // in the annulus
        assert!(point_in_polygon(pt(0.25, 0.5), &poly)); // hole boundary is polygon
    }

    #[test]
    fn containment_matches_winding_number_on_random_points() {
        let mut rng = crate::derive_rng(13, "geo_pip", 0);
        // an L-shaped (concave) polygon plus a convex one
        let ell = PolygonFeature::new(
            vec![
                pt(0.0, 0.0),
                pt(2.0, 0.0),
                pt(2.0, 1.0),
                pt(1.0, 1.0),
                pt(1.0, 2.0),
                pt(0.0, 2.0),
                pt(0.0, 0.0),
            ],
            vec![],
            BTreeMap::new(),
        )
        .unwrap();
        let sq = square(0.2, 0.2, 1.1);
        for poly in [&ell, &sq] {
            for _ in 0..1000 {
                let p = pt(rng.gen_range(-0.5..2.5), rng.gen_range(-0.5..2.5));
                assert_eq!(
                    point_in_polygon(p, poly),
                    winding_number_contains(p, poly),
                    "disagree at ({}, {})",
                    p.lon,
                    p.lat
                );
            }
        }
    }

    #[test]
    fn centroid_of_unit_square() {
        let c = polygon_centroid(&square(0.0, 0.0, 1.0)).unwrap();
        assert!((c.lon - 0.5).abs() < 1e-9 && (c.lat - 0.5).abs() < 1e-9);
    }

    #[test]
    fn centroid_of_right_triangle() {
        let tri = PolygonFeature::new(
            vec![pt(0.0, 0.0), pt(3.0, 0.0), pt(0.0, 3.0), pt(0.0, 0.0)],
            vec![],
            BTreeMap::new(),
        )
        .unwrap();
        let c = polygon_centroid(&tri).unwrap();
        assert!((c.lon - 1.0).abs() < 1e-9 && (c.lat - 1.0).abs() < 1e-9);
    }

    #[test]
    fn centroid_orientation_invariant() {
        let sq = square(5.0, 5.0, 0.5);
        let mut rev = sq.exterior.clone();
        rev.reverse();
        let cw = PolygonFeature::new(rev, vec![], BTreeMap::new()).unwrap();
        let a = polygon_centroid(&sq).unwrap();
        let b = polygon_centroid(&cw).unwrap();
        assert!((a.lon - b.lon).abs() < 1e-12 && (a.lat - b.lat).abs() < 1e-12);
    }

    #[test]
    fn centroid_matches_monte_carlo_on_random_convex_polygons() {
        let mut rng = crate::derive_rng(14, "geo_mc", 0);
        for case in 0..5 {
            // random parallelogram a few hundred meters across
            let center = pt(rng.gen_range(-10.0..10.0), rng.gen_range(-40.0..40.0));
            let f = LocalFrame::new(center);
            let th: f64 = rng.gen_range(0.0..PI);
            let (a, b) = (rng.gen_range(100.0..400.0), rng.gen_range(100.0..400.0));
            let (ux, uy) = (th.cos() * a, th.sin() * a);
            let (vx, vy) = (-th.sin() * b, th.cos() * b);
            let corners = [
                (ux + vx, uy + vy),
                (-ux + vx, -uy + vy),
                (-ux - vx, -uy - vy),
                (ux - vx, uy - vy),
                (ux + vx, uy + vy),
            ];
            let poly = PolygonFeature::new(
                corners.iter().map(|&(x, y)| f.unproject(x, y)).collect(),
                vec![],
                BTreeMap::new(),
            )
            .unwrap();
            let c = polygon_centroid(&poly).unwrap();

            // Monte Carlo: rejection-sample the bbox, average accepted points.
            let (lo_x, lo_y, hi_x, hi_y) = {
                let (a0, b0, a1, b1) = poly.bbox();
                let p0 = f.project(GeoPoint { lon: a0, lat: b0 });
                let p1 = f.project(GeoPoint { lon: a1, lat: b1 });
                (p0.0, p0.1, p1.0, p1.1)
            };
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0u32);
            while n < 40_000 {
                let x = rng.gen_range(lo_x..hi_x);
                let y = rng.gen_range(lo_y..hi_y);
                if point_in_polygon(f.unproject(x, y), &poly) {
                    sx += x;
                    sy += y;
                    n += 1;
                }
            }
            let (cx, cy) = f.project(c);
            let (ex, ey) = (sx / n as f64, sy / n as f64);
            let err = ((cx - ex).powi(2) + (cy - ey).powi(2)).sqrt();
            assert!(err < 3.0, "case {case}: centroid off Monte Carlo by {err:.2} m");
        }
    }

    #[test]
    fn extract_vertices_drops_closing_duplicate() {
        let open = PolylineFeature::new(vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0)], BTreeMap::new()).unwrap();
        assert_eq!(extract_vertices(&open).len(), 3);
        let ring = PolylineFeature::new(
            vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0), pt(0.0, 0.0)],
            BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(extract_vertices(&ring).len(), 3);
    }

    #[test]
    fn buffer_ring_of_square_has_expected_count_and_distance() {
        let center = pt(10.0, 34.0);
        let sq = metric_square(center, 1000.0);
        let ring = buffer_chainage_points(&sq, 50.0, 100.0).unwrap();
        // offset ring length = 4 * 1000 + 2 * pi * 50 ~ 4314 m -> ~43 emissions
        assert!(
            (40..=46).contains(&ring.len()),
            "expected about 43 chainage points, got {}",
            ring.len()
        );
        let f = LocalFrame::for_points(sq.exterior.iter());
        let planar: Vec<(f64, f64)> = sq.exterior[..4].iter().map(|p| f.project(*p)).collect();
        for p in &ring {
            let (x, y) = f.project(*p);
            let d = ring_distance(x, y, &planar);
            assert!((d - 50.0).abs() <= 0.5, "chainage point at {d:.3} m from boundary");
            assert!(!point_in_polygon(*p, &sq));
        }
    }

    #[test]
    fn buffer_rejects_nonpositive_distance_and_spacing() {
        let sq = square(0.0, 0.0, 0.01);
        assert!(matches!(buffer_chainage_points(&sq, 0.0, 10.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(buffer_chainage_points(&sq, -5.0, 10.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(buffer_chainage_points(&sq, 50.0, 0.0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn buffer_rejects_degenerate_polygon() {
        let sliver = PolygonFeature::new(
            vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(2.0, 0.0), pt(0.0, 0.0)],
            vec![],
            BTreeMap::new(),
        )
        .unwrap();
        assert!(matches!(
            buffer_chainage_points(&sliver, 50.0, 100.0),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn buffer_handles_concave_polygon_within_tolerance() {
        // L-shape ~600 m across; reflex corner must not leak candidates
        // closer than 99% of the buffer distance.
        let f = LocalFrame::new(pt(10.0, 34.0));
        let outline = [
            (0.0, 0.0),
            (600.0, 0.0),
            (600.0, 300.0),
            (300.0, 300.0),
            (300.0, 600.0),
            (0.0, 600.0),
            (0.0, 0.0),
        ];
        let poly = PolygonFeature::new(
            outline.iter().map(|&(x, y)| f.unproject(x, y)).collect(),
            vec![],
            BTreeMap::new(),
        )
        .unwrap();
        let pts = buffer_chainage_points(&poly, 50.0, 60.0).unwrap();
        assert!(pts.len() > 20);
        let planar: Vec<(f64, f64)> = outline[..6].iter().copied().collect();
        for p in &pts {
            let (x, y) = f.project(*p);
            let d = ring_distance(x, y, &planar);
            assert!((d - 50.0).abs() <= 0.5, "concave ring point at {d:.3} m");
        }
    }

    #[test]
    fn polygon_constructor_rejects_open_and_short_rings() {
        assert!(PolygonFeature::new(vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0)], vec![], BTreeMap::new()).is_err());
        assert!(PolygonFeature::new(
            vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0), pt(0.5, 0.5)],
            vec![],
            BTreeMap::new()
        )
        .is_err());
    }

    #[test]
    fn geopoint_rejects_out_of_range() {
        assert!(GeoPoint::new(181.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 91.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(GeoPoint::new(180.0, 90.0).is_ok());
    }
}
