//! Trace parsing, the global tower index, and RSS feature vectors.
//!
//! Traces are UTF-8 JSON Lines, one scan per line:
//!
//! ```text
//! {"ts":1500000000.0,"lat":31.2,"lon":29.9,"conf_m":8.5,"readings":[{"tower":"T0003","rss":-71.0}]}
//! ```
//!
//! A CSV variant is also accepted: `ts,lat,lon,conf_m,tower1,rss1,...,tower7,rss7`
//! with empty trailing slots. Ground-truth sidecars use the JSON form with two
//! extra keys, `true_lat` and `true_lon`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;

/// Upper bound on readings per scan (serving cell plus six neighbors).
pub const MAX_READINGS: usize = 7;
pub const DEFAULT_RSS_FLOOR_DBM: f64 = -113.0;
pub const DEFAULT_RSS_CEIL_DBM: f64 = -51.0;
/// Smallest feature value a heard tower can take; 0 is reserved for "unheard".
pub const MIN_HEARD_FEATURE: f64 = 1.0 / 62.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error reading trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("cannot build a tower index from an empty corpus")]
    EmptyCorpus,
    #[error("invalid RSS range: floor {floor} must be below ceiling {ceil}")]
    InvalidRange { floor: f64, ceil: f64 },
    #[error("feature vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("truth sidecar does not line up with the trace: {0}")]
    SidecarMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub tower_id: String,
    pub rss_dbm: f64,
}

/// One geo-tagged scan.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScan {
    pub timestamp_s: f64,
    pub location: GeoPoint,
    pub confidence_radius_m: f64,
    pub readings: Vec<Reading>,
}

impl RawScan {
    pub fn validate(&self) -> Result<(), String> {
        if !self.timestamp_s.is_finite() {
            return Err("non-finite timestamp".into());
        }
        if !self.location.is_valid() {
            return Err(format!(
                "invalid location ({}, {})",
                self.location.lat_deg, self.location.lon_deg
            ));
        }
        if !(self.confidence_radius_m.is_finite() && self.confidence_radius_m >= 0.0) {
            return Err(format!("invalid confidence radius {}", self.confidence_radius_m));
        }
        if self.readings.is_empty() || self.readings.len() > MAX_READINGS {
            return Err(format!(
                "{} readings; a scan carries between 1 and {MAX_READINGS}",
                self.readings.len()
            ));
        }
        let mut seen = BTreeSet::new();
        for r in &self.readings {
            if r.tower_id.is_empty() {
                return Err("empty tower id".into());
            }
            if !r.rss_dbm.is_finite() {
                return Err(format!("non-finite RSS for tower {}", r.tower_id));
            }
            if !seen.insert(r.tower_id.as_str()) {
                return Err(format!("duplicate tower {}", r.tower_id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WireReading {
    tower: String,
    rss: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireScan {
    ts: f64,
    lat: f64,
    lon: f64,
    conf_m: f64,
    readings: Vec<WireReading>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_lon: Option<f64>,
}

impl WireScan {
    fn from_scan(scan: &RawScan, truth: Option<GeoPoint>) -> Self {
        WireScan {
            ts: scan.timestamp_s,
            lat: scan.location.lat_deg,
            lon: scan.location.lon_deg,
            conf_m: scan.confidence_radius_m,
            readings: scan
                .readings
                .iter()
                .map(|r| WireReading { tower: r.tower_id.clone(), rss: r.rss_dbm })
                .collect(),
            true_lat: truth.map(|t| t.lat_deg),
            true_lon: truth.map(|t| t.lon_deg),
        }
    }

    fn into_scan(self) -> (RawScan, Option<GeoPoint>) {
        let truth = match (self.true_lat, self.true_lon) {
            (Some(lat_deg), Some(lon_deg)) => Some(GeoPoint { lat_deg, lon_deg }),
            _ => None,
        };
        let scan = RawScan {
            timestamp_s: self.ts,
            location: GeoPoint { lat_deg: self.lat, lon_deg: self.lon },
            confidence_radius_m: self.conf_m,
            readings: self
                .readings
                .into_iter()
                .map(|r| Reading { tower_id: r.tower, rss_dbm: r.rss })
                .collect(),
        };
        (scan, truth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceFormat {
    #[default]
    JsonLines,
    Csv,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    pub format: TraceFormat,
    /// Fail on the first malformed line instead of skipping it.
    pub strict: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedTrace {
    pub scans: Vec<RawScan>,
    /// Ground truth per scan when the input is a sidecar file.
    pub truth: Vec<Option<GeoPoint>>,
    pub malformed: usize,
}

pub fn parse_trace<R: BufRead>(reader: R, opts: ParseOptions) -> Result<ParsedTrace, IngestError> {
    let mut out = ParsedTrace::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parsed = match opts.format {
            TraceFormat::JsonLines => parse_json_line(trimmed),
            TraceFormat::Csv => {
                if lineno == 1 && trimmed.starts_with("ts") {
                    continue;
                }
                parse_csv_line(trimmed).map(|s| (s, None))
            }
        };
        match parsed.and_then(|(scan, truth)| scan.validate().map(|_| (scan, truth))) {
            Ok((scan, truth)) => {
                out.scans.push(scan);
                out.truth.push(truth);
            }
            Err(reason) => {
                if opts.strict {
                    return Err(IngestError::Malformed { line: lineno, reason });
                }
                warn!("skipping malformed trace line {lineno}: {reason}");
                out.malformed += 1;
            }
        }
    }
    Ok(out)
}

fn parse_json_line(line: &str) -> Result<(RawScan, Option<GeoPoint>), String> {
    serde_json::from_str::<WireScan>(line)
        .map(WireScan::into_scan)
        .map_err(|e| e.to_string())
}

fn parse_csv_line(line: &str) -> Result<RawScan, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() < 6 {
        return Err(format!("expected at least 6 columns, got {}", fields.len()));
    }
    let num = |s: &str, what: &str| s.parse::<f64>().map_err(|e| format!("{what}: {e}"));
    let slots = &fields[4..];
    if slots.len() % 2 != 0 {
        return Err("tower/rss columns must come in pairs".into());
    }
    let mut readings = Vec::new();
    for pair in slots.chunks(2) {
        match (pair[0], pair[1]) {
            ("", "") => continue,
            ("", _) | (_, "") => return Err("half-filled tower slot".into()),
            (tower, rss) => readings.push(Reading {
                tower_id: tower.to_string(),
                rss_dbm: num(rss, "rss")?,
            }),
        }
    }
    Ok(RawScan {
        timestamp_s: num(fields[0], "ts")?,
        location: GeoPoint { lat_deg: num(fields[1], "lat")?, lon_deg: num(fields[2], "lon")? },
        confidence_radius_m: num(fields[3], "conf_m")?,
        readings,
    })
}

pub fn write_trace<W: Write>(mut w: W, scans: &[RawScan]) -> std::io::Result<()> {
    for s in scans {
        serde_json::to_writer(&mut w, &WireScan::from_scan(s, None))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes the ground-truth sidecar: trace records plus `true_lat`/`true_lon`.
pub fn write_truth_sidecar<W: Write>(
    mut w: W,
    scans: &[RawScan],
    truth: &[GeoPoint],
) -> std::io::Result<()> {
    for (s, t) in scans.iter().zip(truth) {
        serde_json::to_writer(&mut w, &WireScan::from_scan(s, Some(*t)))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Pairs trace scans with sidecar truth, checking the records line up.
pub fn join_truth(scans: &[RawScan], sidecar: &ParsedTrace) -> Result<Vec<GeoPoint>, IngestError> {
    if scans.len() != sidecar.scans.len() {
        return Err(IngestError::SidecarMismatch(format!(
            "{} scans vs {} sidecar records",
            scans.len(),
            sidecar.scans.len()
        )));
    }
    scans
        .iter()
        .zip(sidecar.scans.iter().zip(&sidecar.truth))
        .enumerate()
        .map(|(i, (s, (t, truth)))| {
            if s.timestamp_s != t.timestamp_s {
                return Err(IngestError::SidecarMismatch(format!("timestamp differs at record {i}")));
            }
            truth.ok_or_else(|| IngestError::SidecarMismatch(format!("record {i} has no truth")))
        })
        .collect()
}

/// Sorted tower ids mapped to feature columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TowerIndex {
    ids: Vec<String>,
    columns: BTreeMap<String, usize>,
}

impl TowerIndex {
    pub fn build(scans: &[RawScan]) -> Result<Self, IngestError> {
        let ids: BTreeSet<&str> =
            scans.iter().flat_map(|s| s.readings.iter().map(|r| r.tower_id.as_str())).collect();
        if ids.is_empty() {
            return Err(IngestError::EmptyCorpus);
        }
        Ok(Self::from_ids(ids.into_iter().map(str::to_string)))
    }

    /// Index over the given ids; duplicates collapse and order is re-sorted.
    pub fn from_ids(ids: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = ids.into_iter().collect();
        let ids: Vec<String> = set.into_iter().collect();
        let columns = ids.iter().enumerate().map(|(j, id)| (id.clone(), j)).collect();
        TowerIndex { ids, columns }
    }

    /// M, the input dimension.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn column(&self, tower_id: &str) -> Option<usize> {
        self.columns.get(tower_id).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssRange {
    pub floor_dbm: f64,
    pub ceil_dbm: f64,
}

impl Default for RssRange {
    fn default() -> Self {
        RssRange { floor_dbm: DEFAULT_RSS_FLOOR_DBM, ceil_dbm: DEFAULT_RSS_CEIL_DBM }
    }
}

impl RssRange {
    pub fn new(floor_dbm: f64, ceil_dbm: f64) -> Result<Self, IngestError> {
        if !(floor_dbm.is_finite() && ceil_dbm.is_finite() && floor_dbm < ceil_dbm) {
            return Err(IngestError::InvalidRange { floor: floor_dbm, ceil: ceil_dbm });
        }
        Ok(RssRange { floor_dbm, ceil_dbm })
    }

    /// Maps a heard RSS into `[MIN_HEARD_FEATURE, 1]`.
    pub fn normalize(&self, rss_dbm: f64) -> f64 {
        ((rss_dbm - self.floor_dbm) / (self.ceil_dbm - self.floor_dbm)).clamp(MIN_HEARD_FEATURE, 1.0)
    }
}

/// Length-M normalized RSS vector; 0 marks a tower that was not heard.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(m: usize) -> Self {
        FeatureVector(vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Number of heard towers.
    pub fn heard(&self) -> usize {
        self.0.iter().filter(|&&v| v != 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vectorized {
    pub features: FeatureVector,
    /// Readings dropped because their tower is not in the index.
    pub unknown_towers: usize,
}

pub fn vectorize(scan: &RawScan, index: &TowerIndex, range: RssRange) -> Vectorized {
    let mut features = FeatureVector::zeros(index.len());
    let mut unknown_towers = 0;
    for r in &scan.readings {
        match index.column(&r.tower_id) {
            Some(j) => features.0[j] = range.normalize(r.rss_dbm),
            None => unknown_towers += 1,
        }
    }
    Vectorized { features, unknown_towers }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan_with(readings: &[(&str, f64)]) -> RawScan {
        RawScan {
            timestamp_s: 1.0,
            location: GeoPoint { lat_deg: 31.2, lon_deg: 29.9 },
            confidence_radius_m: 5.0,
            readings: readings
                .iter()
                .map(|(t, r)| Reading { tower_id: t.to_string(), rss_dbm: *r })
                .collect(),
        }
    }

    fn json_line(n: usize) -> String {
        let readings: Vec<String> =
            (0..n).map(|i| format!("{{\"tower\":\"T{i}\",\"rss\":-80}}")).collect();
        format!(
            "{{\"ts\":1,\"lat\":31.2,\"lon\":29.9,\"conf_m\":4,\"readings\":[{}]}}",
            readings.join(",")
        )
    }

    #[test]
    fn parse_empty_and_capacity() {
        let p = parse_trace("".as_bytes(), ParseOptions::default()).unwrap();
        assert!(p.scans.is_empty());

        let p = parse_trace(json_line(7).as_bytes(), ParseOptions::default()).unwrap();
        assert_eq!(p.scans[0].readings.len(), 7);

        let p = parse_trace(json_line(8).as_bytes(), ParseOptions::default()).unwrap();
        assert!(p.scans.is_empty());
        assert_eq!(p.malformed, 1);

        let strict = ParseOptions { strict: true, ..Default::default() };
        assert!(matches!(
            parse_trace(json_line(8).as_bytes(), strict),
            Err(IngestError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn parse_skips_garbage_and_duplicates() {
        let text = format!(
            "{}\nnot json\n{}\n",
            json_line(2),
            r#"{"ts":1,"lat":31.2,"lon":29.9,"conf_m":4,"readings":[{"tower":"A","rss":-80},{"tower":"A","rss":-70}]}"#
        );
        let p = parse_trace(text.as_bytes(), ParseOptions::default()).unwrap();
        assert_eq!(p.scans.len(), 1);
        assert_eq!(p.malformed, 2);
    }

    #[test]
    fn parse_csv_variant() {
        let text = "ts,lat,lon,conf_m,tower1,rss1,tower2,rss2,tower3,rss3\n\
                    10,31.2,29.9,6.5,A,-70,B,-90,,\n";
        let opts = ParseOptions { format: TraceFormat::Csv, strict: true };
        let p = parse_trace(text.as_bytes(), opts).unwrap();
        assert_eq!(p.scans.len(), 1);
        assert_eq!(p.scans[0].readings.len(), 2);
        assert_eq!(p.scans[0].readings[1].tower_id, "B");
        assert_eq!(p.scans[0].confidence_radius_m, 6.5);
    }

    #[test]
    fn tower_index_sorted_dedup() {
        let scans = vec![scan_with(&[("B", -80.0), ("A", -70.0)]), scan_with(&[("A", -60.0), ("C", -90.0)])];
        let idx = TowerIndex::build(&scans).unwrap();
        assert_eq!(idx.ids(), &["A", "B", "C"]);
        assert_eq!(idx.column("B"), Some(1));
        assert_eq!(idx.len(), 3);
        assert!(matches!(TowerIndex::build(&[]), Err(IngestError::EmptyCorpus)));
        let one = TowerIndex::build(&[scan_with(&[("X", -70.0)])]).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn vectorize_values() {
        let idx = TowerIndex::from_ids(["A", "B", "C", "D"].map(String::from));
        let s = scan_with(&[("A", -51.0), ("B", -82.0), ("C", -113.0), ("Z", -70.0)]);
        let v = vectorize(&s, &idx, RssRange::default());
        assert_eq!(v.features.0[0], 1.0);
        assert!((v.features.0[1] - 0.5).abs() < 1e-12);
        assert_eq!(v.features.0[2], MIN_HEARD_FEATURE);
        assert_eq!(v.features.0[3], 0.0);
        assert_eq!(v.unknown_towers, 1);
        assert_eq!(v.features.heard(), 3);
    }

    #[test]
    fn rss_range_validation() {
        assert!(RssRange::new(-51.0, -113.0).is_err());
        assert!(RssRange::new(-100.0, -100.0).is_err());
    }
}
