//! Training-point generation around recorded hazard polygons.
//!
//! Positives are two uniform interior points per hazard polygon. Negatives
//! come in two families: uniform points over the bordered region that avoid
//! every hazard polygon, and hard negatives placed on buffer rings a fixed
//! distance outside hazard boundaries (50/500/5000 m presets). A training
//! set pairs all positives with an equal number of negatives drawn from one
//! strategy or a hybrid 25/25/25/25 mix.
//!
//! Everything is a pure function of (inputs, seed). Per-polygon work uses
//! an RNG stream derived from (seed, polygon index), so results are
//! identical at any thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::error::Error;
use crate::geo::{
    buffer_chainage_points, point_in_polygon, polygon_centroid, GeoPoint, LocalFrame,
    PolygonFeature,
};
use crate::Result;

// ── Types ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Hazard,
    Clear,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Hazard => 1,
            Label::Clear => 0,
        }
    }
}

/// How a sample point was produced. Hard negatives carry their buffer
/// distance in meters; 50/500/5000 are the documented presets but any
/// positive distance is usable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Strategy {
    Positive,
    Random,
    HardNegative(u32),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Positive => f.write_str("positive"),
            Strategy::Random => f.write_str("random"),
            Strategy::HardNegative(b) => write!(f, "hn{b}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(Strategy::Positive),
            "random" => Ok(Strategy::Random),
            _ => s
                .strip_prefix("hn")
                .and_then(|b| b.parse::<u32>().ok())
                .filter(|b| *b > 0)
                .map(Strategy::HardNegative)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown strategy {s:?}"))),
        }
    }
}

/// One labeled location. Ids are unique within any set this module builds:
/// the strategy occupies the high bits, a per-strategy sequence number the
/// low 40.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub id: u64,
    pub location: GeoPoint,
    pub label: Label,
    pub strategy: Strategy,
    pub source_polygon_id: Option<u64>,
}

fn make_id(strategy: Strategy, seq: u64) -> u64 {
    let code: u64 = match strategy {
        Strategy::Positive => 1,
        Strategy::Random => 2,
        Strategy::HardNegative(b) => 0x100 + b as u64,
    };
    debug_assert!(seq < (1 << 40));
    (code << 40) | seq
}

/// A set of sample points plus the seed that produced it and the count of
/// points per strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub points: Vec<SamplePoint>,
    pub seed: u64,
    pub strategy_mix: BTreeMap<String, usize>,
}

impl SampleSet {
    pub fn from_points(points: Vec<SamplePoint>, seed: u64) -> Self {
        let mut strategy_mix = BTreeMap::new();
        for p in &points {
            *strategy_mix.entry(p.strategy.to_string()).or_insert(0) += 1;
        }
        SampleSet { points, seed, strategy_mix }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Writes `id,lon,lat,label,strategy,source_polygon_id` rows in set
    /// order. Coordinates keep full precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("id,lon,lat,label,strategy,source_polygon_id\n");
        for p in &self.points {
            let src = p.source_polygon_id.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.id,
                p.location.lon,
                p.location.lat,
                p.label.as_u8(),
                p.strategy,
                src
            ));
        }
        std::fs::write(path, s).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read_csv(path: &Path, seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let display = path.display().to_string();
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) =
            lines.next().ok_or_else(|| Error::MissingColumn { path: display.clone(), column: "id".into() })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let col = |name: &str| -> Result<usize> {
            cols.iter()
                .position(|c| *c == name)
                .ok_or_else(|| Error::MissingColumn { path: display.clone(), column: name.into() })
        };
        let (id_i, lon_i, lat_i, label_i, strat_i, src_i) =
            (col("id")?, col("lon")?, col("lat")?, col("label")?, col("strategy")?, col("source_polygon_id")?);
        let mut points = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let err = |message: String| Error::ParseError { path: display.clone(), line: i + 1, column: 1, message };
            let id: u64 = f[id_i].parse().map_err(|_| err(format!("bad id {:?}", f[id_i])))?;
            let lon: f64 = f[lon_i].parse().map_err(|_| err(format!("bad lon {:?}", f[lon_i])))?;
            let lat: f64 = f[lat_i].parse().map_err(|_| err(format!("bad lat {:?}", f[lat_i])))?;
            let label = match f[label_i] {
                "1" => Label::Hazard,
                "0" => Label::Clear,
                other => return Err(err(format!("bad label {other:?}"))),
            };
            let strategy: Strategy = f[strat_i].parse().map_err(|_| err(format!("bad strategy {:?}", f[strat_i])))?;
            let source_polygon_id = if f[src_i].is_empty() {
                None
            } else {
                Some(f[src_i].parse::<u64>().map_err(|_| err(format!("bad source id {:?}", f[src_i])))?)
            };
            points.push(SamplePoint {
                id,
                location: GeoPoint::new(lon, lat).map_err(|e| err(e.to_string()))?,
                label,
                strategy,
                source_polygon_id,
            });
        }
        Ok(SampleSet::from_points(points, seed))
    }
}

/// Negative-sample pools a training set can draw from.
#[derive(Debug, Clone, Default)]
pub struct NegativePools {
    pub random: Vec<SamplePoint>,
    pub hard: BTreeMap<u32, Vec<SamplePoint>>,
}

/// Negative-strategy mix for an assembled training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixSpec {
    Random,
    HardNegative(u32),
    /// Equal quarters of hn50, hn500, hn5000 and random negatives.
    Hybrid,
}

impl fmt::Display for MixSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixSpec::Random => f.write_str("random"),
            MixSpec::HardNegative(b) => write!(f, "hn{b}"),
            MixSpec::Hybrid => f.write_str("hybrid"),
        }
    }
}

impl FromStr for MixSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(MixSpec::Random),
            "hybrid" => Ok(MixSpec::Hybrid),
            _ => match Strategy::from_str(s)? {
                Strategy::HardNegative(b) => Ok(MixSpec::HardNegative(b)),
                _ => Err(Error::InvalidParameter(format!("unknown mix {s:?}"))),
            },
        }
    }
}

// ── Positives ───────────────────────────────────────────────────────────

/// Two uniform interior points per hazard polygon, rejection-sampled from
/// the polygon's bounding box. After 1,000 failed trials for a point the
/// centroid is used instead (and the fallback logged); this only happens
/// for sliver polygons whose area is a tiny fraction of their box.
pub fn sample_positives(hazards: &[PolygonFeature], seed: u64) -> Result<Vec<SamplePoint>> {
    const POINTS_PER_POLYGON: usize = 2;
    const MAX_TRIALS: usize = 1000;
    let per_poly: Vec<Result<Vec<GeoPoint>>> = hazards
        .par_iter()
        .enumerate()
        .map(|(idx, poly)| {
            let mut rng = crate::derive_rng(seed, "positives", idx as u64);
            let (min_lon, min_lat, max_lon, max_lat) = poly.bbox();
            let mut pts = Vec::with_capacity(POINTS_PER_POLYGON);
            for _ in 0..POINTS_PER_POLYGON {
                let mut accepted = None;
                for _ in 0..MAX_TRIALS {
                    let cand = GeoPoint {
                        lon: rng.gen_range(min_lon..=max_lon),
                        lat: rng.gen_range(min_lat..=max_lat),
                    };
                    if point_in_polygon(cand, poly) {
                        accepted = Some(cand);
                        break;
                    }
                }
                match accepted {
                    Some(p) => pts.push(p),
                    None => {
                        log::warn!("polygon {idx}: rejection sampling exhausted, using centroid");
                        pts.push(polygon_centroid(poly)?);
                    }
                }
            }
            Ok(pts)
        })
        .collect();

    let mut out = Vec::with_capacity(hazards.len() * POINTS_PER_POLYGON);
    for (idx, pts) in per_poly.into_iter().enumerate() {
        for (j, location) in pts?.into_iter().enumerate() {
            out.push(SamplePoint {
                id: make_id(Strategy::Positive, (idx * POINTS_PER_POLYGON + j) as u64),
                location,
                label: Label::Hazard,
                strategy: Strategy::Positive,
                source_polygon_id: Some(idx as u64),
            });
        }
    }
    Ok(out)
}

// ── Negatives ───────────────────────────────────────────────────────────

fn bboxes(polys: &[PolygonFeature]) -> Vec<(f64, f64, f64, f64)> {
    polys.iter().map(PolygonFeature::bbox).collect()
}

fn in_any_polygon(p: GeoPoint, polys: &[PolygonFeature], boxes: &[(f64, f64, f64, f64)]) -> bool {
    polys.iter().zip(boxes).any(|(poly, b)| {
        p.lon >= b.0 && p.lat >= b.1 && p.lon <= b.2 && p.lat <= b.3 && point_in_polygon(p, poly)
    })
}

/// `n` points uniform over the border polygon that avoid every hazard
/// polygon. Gives up when 10,000 consecutive candidates are rejected
/// (acceptance below 1e-4), which happens only when hazards blanket the
/// border.
pub fn sample_random_negatives(
    border: &PolygonFeature,
    hazards: &[PolygonFeature],
    n: usize,
    seed: u64,
) -> Result<Vec<SamplePoint>> {
    const REJECT_WINDOW: usize = 10_000;
    let mut rng = crate::derive_rng(seed, "random_negatives", 0);
    let (min_lon, min_lat, max_lon, max_lat) = border.bbox();
    let hazard_boxes = bboxes(hazards);
    let mut out = Vec::with_capacity(n);
    let mut consecutive_rejects = 0usize;
    while out.len() < n {
        let cand = GeoPoint { lon: rng.gen_range(min_lon..=max_lon), lat: rng.gen_range(min_lat..=max_lat) };
        if point_in_polygon(cand, border) && !in_any_polygon(cand, hazards, &hazard_boxes) {
            out.push(SamplePoint {
                id: make_id(Strategy::Random, out.len() as u64),
                location: cand,
                label: Label::Clear,
                strategy: Strategy::Random,
                source_polygon_id: None,
            });
            consecutive_rejects = 0;
        } else {
            consecutive_rejects += 1;
            if consecutive_rejects >= REJECT_WINDOW {
                return Err(Error::SamplingExhausted(format!(
                    "{consecutive_rejects} consecutive rejections while drawing random negatives \
                     ({} of {n} placed)",
                    out.len()
                )));
            }
        }
    }
    Ok(out)
}

/// `per_polygon` points on the ring `buffer_m` outside each hazard
/// boundary. Ring candidates that fall inside any (possibly overlapping)
/// hazard polygon are discarded; polygons whose rings cannot supply their
/// share are topped up from other polygons' leftover candidates so the
/// total still equals `per_polygon * hazards.len()`.
///
/// Chainage spacing is `clamp(buffer_m, 50, 500)` meters: fine enough for
/// candidate diversity on small rings, coarse enough to stay cheap on
/// 5,000 m rings.
pub fn sample_hard_negatives(
    hazards: &[PolygonFeature],
    buffer_m: f64,
    per_polygon: usize,
    seed: u64,
) -> Result<Vec<SamplePoint>> {
    let strategy = Strategy::HardNegative(buffer_m.round() as u32);
    let spacing = buffer_m.clamp(50.0, 500.0);
    let hazard_boxes = bboxes(hazards);

    // Per polygon: ring candidates that survive the overlap filter, split
    // into this polygon's picks and its leftovers.
    let per_poly: Vec<Result<(Vec<GeoPoint>, Vec<GeoPoint>)>> = hazards
        .par_iter()
        .enumerate()
        .map(|(idx, poly)| {
            let ring = buffer_chainage_points(poly, buffer_m, spacing)?;
            let mut kept: Vec<GeoPoint> =
                ring.into_iter().filter(|p| !in_any_polygon(*p, hazards, &hazard_boxes)).collect();
            let mut rng = crate::derive_rng(seed, "hard_negatives", idx as u64);
            // partial Fisher-Yates: the first per_polygon entries are the picks
            let take = per_polygon.min(kept.len());
            for i in 0..take {
                let j = rng.gen_range(i..kept.len());
                kept.swap(i, j);
            }
            let leftovers = kept.split_off(take);
            Ok((kept, leftovers))
        })
        .collect();

    let target = per_polygon * hazards.len();
    let mut picks: Vec<(GeoPoint, u64)> = Vec::with_capacity(target);
    let mut pool: Vec<(GeoPoint, u64)> = Vec::new();
    for (idx, r) in per_poly.into_iter().enumerate() {
        let (chosen, leftovers) = r?;
        picks.extend(chosen.into_iter().map(|p| (p, idx as u64)));
        pool.extend(leftovers.into_iter().map(|p| (p, idx as u64)));
    }
    if picks.len() < target {
        let deficit = target - picks.len();
        let mut rng = crate::derive_rng(seed, "hard_negatives_deficit", buffer_m.round() as u64);
        if pool.len() < deficit {
            return Err(Error::SamplingExhausted(format!(
                "hard negatives at {buffer_m} m: need {target}, rings supplied {}",
                picks.len() + pool.len()
            )));
        }
        for i in 0..deficit {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        picks.extend(pool.into_iter().take(deficit));
    }

    Ok(picks
        .into_iter()
        .enumerate()
        .map(|(seq, (location, src))| SamplePoint {
            id: make_id(strategy, seq as u64),
            location,
            label: Label::Clear,
            strategy,
            source_polygon_id: Some(src),
        })
        .collect())
}

// ── Assembly and splits ─────────────────────────────────────────────────

fn draw<'a>(
    pool: &'a [SamplePoint],
    need: usize,
    strategy: &str,
    seed: u64,
) -> Result<Vec<SamplePoint>> {
    if pool.len() < need {
        return Err(Error::InsufficientNegatives {
            strategy: strategy.to_string(),
            available: pool.len(),
            needed: need,
        });
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let mut rng = crate::derive_rng(seed, &format!("assemble_{strategy}"), 0);
    for i in 0..need {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    Ok(idx[..need].iter().map(|&i| pool[i]).collect())
}

/// Pairs every positive with one negative drawn per `mix`, then shuffles
/// the combined set by `seed`. The result is balanced by construction.
pub fn assemble_training_set(
    positives: &[SamplePoint],
    pools: &NegativePools,
    mix: MixSpec,
    seed: u64,
) -> Result<SampleSet> {
    let p = positives.len();
    if p == 0 {
        return Err(Error::InvalidParameter("no positives to assemble".into()));
    }
    let hard = |b: u32| -> &[SamplePoint] { pools.hard.get(&b).map(Vec::as_slice).unwrap_or(&[]) };
    let mut negatives: Vec<SamplePoint> = Vec::with_capacity(p);
    match mix {
        MixSpec::Random => negatives.extend(draw(&pools.random, p, "random", seed)?),
        MixSpec::HardNegative(b) => negatives.extend(draw(hard(b), p, &format!("hn{b}"), seed)?),
        MixSpec::Hybrid => {
            // quarters; any remainder tops up the strategies in this order
            let shares = [
                (format!("hn{}", 50), hard(50)),
                (format!("hn{}", 500), hard(500)),
                (format!("hn{}", 5000), hard(5000)),
                ("random".to_string(), pools.random.as_slice()),
            ];
            let base = p / 4;
            let remainder = p - base * 4;
            for (i, (name, pool)) in shares.iter().enumerate() {
                let need = base + usize::from(i < remainder);
                negatives.extend(draw(pool, need, name, seed)?);
            }
        }
    }

    let mut points: Vec<SamplePoint> = positives.to_vec();
    points.extend(negatives);
    let mut rng = crate::derive_rng(seed, "assemble_shuffle", 0);
    for i in (1..points.len()).rev() {
        let j = rng.gen_range(0..=i);
        points.swap(i, j);
    }
    Ok(SampleSet::from_points(points, seed))
}

/// Stratified train/test partition. Within each label class, points are
/// ordered by id, shuffled by a class-specific stream of `seed`, and the
/// first `round(fraction * class size)` become test. Partitions come back
/// sorted by id.
pub fn split_train_test(set: &SampleSet, test_fraction: f64, seed: u64) -> Result<(SampleSet, SampleSet)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let mut train: Vec<SamplePoint> = Vec::new();
    let mut test: Vec<SamplePoint> = Vec::new();
    for label in [Label::Hazard, Label::Clear] {
        let mut class: Vec<SamplePoint> = set.points.iter().filter(|p| p.label == label).copied().collect();
        class.sort_by_key(|p| p.id);
        let mut rng = crate::derive_rng(seed, "split", label.as_u8() as u64);
        for i in (1..class.len()).rev() {
            let j = rng.gen_range(0..=i);
            class.swap(i, j);
        }
        let n_test = (test_fraction * class.len() as f64).round() as usize;
        for (i, p) in class.into_iter().enumerate() {
            if i < n_test {
                test.push(p);
            } else {
                train.push(p);
            }
        }
    }
    train.sort_by_key(|p| p.id);
    test.sort_by_key(|p| p.id);
    Ok((SampleSet::from_points(train, seed), SampleSet::from_points(test, seed)))
}

/// Geographic holdout: points inside `region` become the test set.
pub fn split_by_region(set: &SampleSet, region: &PolygonFeature) -> (SampleSet, SampleSet) {
    let (inside, outside): (Vec<SamplePoint>, Vec<SamplePoint>) =
        set.points.iter().partition(|p| point_in_polygon(p.location, region));
    (SampleSet::from_points(outside, set.seed), SampleSet::from_points(inside, set.seed))
}

/// Cell-centered lattice at `spacing_m` over the region, labeled by hazard
/// containment. Used to paint risk maps and to stress models on the
/// natural class imbalance.
pub fn sample_evaluation_grid(
    region: &PolygonFeature,
    spacing_m: f64,
    hazards: &[PolygonFeature],
) -> Result<SampleSet> {
    if !(spacing_m > 0.0) {
        return Err(Error::InvalidParameter(format!("grid spacing must be > 0, got {spacing_m}")));
    }
    let frame = LocalFrame::for_points(region.exterior.iter());
    let (min_lon, min_lat, max_lon, max_lat) = region.bbox();
    let (x0, y0) = frame.project(GeoPoint { lon: min_lon, lat: min_lat });
    let (x1, y1) = frame.project(GeoPoint { lon: max_lon, lat: max_lat });
    // nearest-integer cell count keeps an exact multiple of the spacing at
    // exactly extent/spacing cells despite projection rounding
    let nx = ((x1 - x0) / spacing_m + 0.5).floor() as i64;
    let ny = ((y1 - y0) / spacing_m + 0.5).floor() as i64;
    if nx < 1 || ny < 1 {
        return Err(Error::DegenerateGeometry(format!(
            "region extent {:.1} x {:.1} m is below the {spacing_m} m grid spacing",
            x1 - x0,
            y1 - y0
        )));
    }
    let hazard_boxes = bboxes(hazards);
    let mut points = Vec::new();
    let mut seq = 0u64;
    for iy in 0..ny {
        for ix in 0..nx {
            let p = frame.unproject(x0 + (ix as f64 + 0.5) * spacing_m, y0 + (iy as f64 + 0.5) * spacing_m);
            if !point_in_polygon(p, region) {
                continue;
            }
            let hazardous = in_any_polygon(p, hazards, &hazard_boxes);
            let (label, strategy) = if hazardous {
                (Label::Hazard, Strategy::Positive)
            } else {
                (Label::Clear, Strategy::Random)
            };
            points.push(SamplePoint {
                id: make_id(strategy, seq),
                location: p,
                label,
                strategy,
                source_polygon_id: None,
            });
            seq += 1;
        }
    }
    Ok(SampleSet::from_points(points, 0))
}

// ── Tests ───────────────────────────────────────────────────────────────
