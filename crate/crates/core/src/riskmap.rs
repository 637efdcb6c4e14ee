//! Five-band risk classification of predicted probabilities and its
//! exports: a GIS-loadable GeoJSON point layer and a band,percent summary.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::Error;
use crate::geo::GeoPoint;
use crate::Result;

/// Probability cut points between adjacent bands.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.1, 0.2, 0.4, 0.6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RiskBand {
    VeryLow,
    Low,
    Medium,
    High,
    VeryHigh,
}

impl RiskBand {
    pub const ALL: [RiskBand; 5] =
        [RiskBand::VeryLow, RiskBand::Low, RiskBand::Medium, RiskBand::High, RiskBand::VeryHigh];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskBand::VeryLow => "very_low",
            RiskBand::Low => "low",
            RiskBand::Medium => "medium",
            RiskBand::High => "high",
            RiskBand::VeryHigh => "very_high",
        }
    }

    /// Conventional display color for map styling.
    pub fn color(self) -> &'static str {
        match self {
            RiskBand::VeryLow => "blue",
            RiskBand::Low => "green",
            RiskBand::Medium => "yellow",
            RiskBand::High => "orange",
            RiskBand::VeryHigh => "red",
        }
    }
}

impl fmt::Display for RiskBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<RiskBand> {
        RiskBand::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown risk band {s:?}")))
    }
}

fn check_thresholds(thresholds: &[f64; 4]) -> Result<()> {
    let increasing = thresholds.windows(2).all(|w| w[0] < w[1]);
    if !increasing || !(thresholds[0] > 0.0) || !(thresholds[3] < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "band thresholds must be strictly increasing within (0, 1), got {thresholds:?}"
        )));
    }
    Ok(())
}

/// Band of a probability under left-closed intervals: a probability equal
/// to a cut point lands in the higher band.
pub fn band_probability(p: f64, thresholds: &[f64; 4]) -> Result<RiskBand> {
    check_thresholds(thresholds)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange(format!("probability {p} outside [0, 1]")));
    }
    let idx = thresholds.iter().filter(|t| p >= **t).count();
    Ok(RiskBand::ALL[idx])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskPoint {
    pub location: GeoPoint,
    pub probability: f64,
    pub band: RiskBand,
}

/// Banded point predictions plus the provenance needed to trace a map back
/// to the model run that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskMap {
    pub points: Vec<RiskPoint>,
    pub thresholds: [f64; 4],
    pub model_id: String,
    pub schema_fingerprint: String,
    pub timestamp: String,
}

impl RiskMap {
    /// Bands every probability; the band invariant holds by construction.
    pub fn build(
        locations: &[GeoPoint],
        probabilities: &[f64],
        thresholds: [f64; 4],
        model_id: &str,
        schema_fingerprint: &str,
        timestamp: &str,
    ) -> Result<RiskMap> {
        check_thresholds(&thresholds)?;
        if locations.len() != probabilities.len() {
            return Err(Error::LengthMismatch(format!(
                "{} locations vs {} probabilities",
                locations.len(),
                probabilities.len()
            )));
        }
        let points = locations
            .iter()
            .zip(probabilities)
            .map(|(loc, p)| {
                Ok(RiskPoint { location: *loc, probability: *p, band: band_probability(*p, &thresholds)? })
            })
            .collect::<Result<Vec<RiskPoint>>>()?;
        Ok(RiskMap {
            points,
            thresholds,
            model_id: model_id.to_string(),
            schema_fingerprint: schema_fingerprint.to_string(),
            timestamp: timestamp.to_string(),
        })
    }

    /// Percentage of points per band, in band order. Sums to 100.
    pub fn band_summary(&self) -> Result<[(RiskBand, f64); 5]> {
        if self.points.is_empty() {
            return Err(Error::EmptyMap);
        }
        let mut counts = [0usize; 5];
        for p in &self.points {
            counts[p.band as usize] += 1;
        }
        let n = self.points.len() as f64;
        let mut out = [(RiskBand::VeryLow, 0.0); 5];
        for (slot, (band, count)) in out.iter_mut().zip(RiskBand::ALL.into_iter().zip(counts)) {
            *slot = (band, 100.0 * count as f64 / n);
        }
        Ok(out)
    }

    /// Band percentages as `band,percent` CSV.
    pub fn write_band_summary_csv(&self, path: &Path) -> Result<()> {
        let summary = self.band_summary()?;
        let mut body = String::from("band,percent\n");
        for (band, percent) in summary {
            body.push_str(&format!("{band},{percent}\n"));
        }
        std::fs::write(path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Writes the map as a GeoJSON FeatureCollection of points carrying
/// `probability` (six decimals) and `risk_band` properties. An empty map
/// is rejected before anything touches the filesystem.
pub fn export_risk_geojson(map: &RiskMap, path: &Path) -> Result<()> {
    if map.points.is_empty() {
        return Err(Error::EmptyMap);
    }
    let mut body = String::from("{\"type\":\"FeatureCollection\",\"features\":[");
    for (i, p) in map.points.iter().enumerate() {
        if i > 0 {
            body.push(',');
        }
        body.push_str(&format!(
            "{{\"type\":\"Feature\",\"geometry\":{{\"type\":\"Point\",\"coordinates\":[{},{}]}},\
             \"properties\":{{\"probability\":{:.6},\"risk_band\":\"{}\"}}}}",
            p.location.lon, p.location.lat, p.probability, p.band
        ));
    }
    body.push_str("]}\n");
    std::fs::write(path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
