//! Train/test splitting, localization error reports, and side-by-side
//! comparison tables.
//!
//! Quantiles use the nearest-rank convention: the q-th quantile of n sorted
//! errors is element `ceil(q * n) - 1`, with q = 0 mapped to the minimum.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baseline::{baseline_localize, HistogramModel};
use crate::geo::{GeoPoint, VirtualGrid};
use crate::infer::{localize, InferError, LocationEstimate};
use crate::ingest::RawScan;
use crate::model::FingerprintModel;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("split leaves an empty {0} set")]
    EmptySide(&'static str),
    #[error("no test scans could be evaluated")]
    EmptyTestSet,
    #[error("{scans} test scans but {truth} truth points")]
    TruthMismatch { scans: usize, truth: usize },
    #[error("reports were computed over different test sets")]
    MismatchedTestSets,
    #[error(transparent)]
    Infer(#[from] InferError),
}

/// Seeded shuffle then split; returns `(train_indices, test_indices)`, each
/// sorted ascending so downstream order follows the input.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::InvalidRatio(ratio));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * ratio).round() as usize;
    if n_train == 0 {
        return Err(EvalError::EmptySide("train"));
    }
    if n_train == n {
        return Err(EvalError::EmptySide("test"));
    }
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), EvalError> {
    let (a, b) = split_indices(items.len(), ratio, seed)?;
    Ok((a.iter().map(|&i| items[i].clone()).collect(), b.iter().map(|&i| items[i].clone()).collect()))
}

/// Anything that turns a scan into a location estimate on a grid.
pub trait Localizer {
    fn grid(&self) -> &VirtualGrid;
    fn locate(&self, scan: &RawScan) -> Result<LocationEstimate, InferError>;
}

impl Localizer for FingerprintModel {
    fn grid(&self) -> &VirtualGrid {
        &self.grid
    }

    fn locate(&self, scan: &RawScan) -> Result<LocationEstimate, InferError> {
        localize(self, scan)
    }
}

/// Histogram baseline bound to the grid it was trained on.
pub struct BaselineLocalizer<'a> {
    pub model: &'a HistogramModel,
    pub grid: &'a VirtualGrid,
}

impl Localizer for BaselineLocalizer<'_> {
    fn grid(&self) -> &VirtualGrid {
        self.grid
    }

    fn locate(&self, scan: &RawScan) -> Result<LocationEstimate, InferError> {
        baseline_localize(self.model, self.grid, scan).map_err(|e| match e {
            crate::baseline::BaselineError::Infer(i) => i,
            other => InferError::Model(crate::model::ModelError::Format(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantiles {
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn as_array(&self) -> [f64; 5] {
        [self.min, self.p25, self.p50, self.p75, self.max]
    }

    pub const NAMES: [&'static str; 5] = ["min", "p25", "p50", "p75", "max"];
}

/// Nearest-rank quantile of an ascending slice.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty list");
    if q <= 0.0 {
        return sorted[0];
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub system: String,
    /// Per-scan errors in meters, in test-set order.
    pub errors: Vec<f64>,
    /// Scans skipped because no known tower was heard.
    pub excluded: usize,
    pub quantiles: Quantiles,
    /// Digest identifying the test set, when known.
    pub test_set: Option<String>,
}

impl ErrorReport {
    pub fn from_errors(system: &str, errors: Vec<f64>, excluded: usize, test_set: Option<String>) -> Result<Self, EvalError> {
        if errors.is_empty() {
            return Err(EvalError::EmptyTestSet);
        }
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        let quantiles = Quantiles {
            min: sorted[0],
            p25: nearest_rank(&sorted, 0.25),
            p50: nearest_rank(&sorted, 0.50),
            p75: nearest_rank(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        };
        Ok(ErrorReport { system: system.into(), errors, excluded, quantiles, test_set })
    }

    /// A report carrying only published quantiles.
    pub fn from_quantiles(system: &str, quantiles: Quantiles) -> Self {
        ErrorReport { system: system.into(), errors: Vec::new(), excluded: 0, quantiles, test_set: None }
    }

    pub fn median(&self) -> f64 {
        self.quantiles.p50
    }

    /// Fraction of errors at or below each whole meter from 0 to the max.
    pub fn cdf(&self) -> Vec<(u64, f64)> {
        let mut sorted = self.errors.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let top = sorted.last().map_or(0, |m| m.ceil() as u64);
        let mut at = 0usize;
        (0..=top)
            .map(|t| {
                while at < sorted.len() && sorted[at] <= t as f64 {
                    at += 1;
                }
                (t, at as f64 / n)
            })
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let q = &self.quantiles;
        format!(
            "system,n,excluded,min_m,p25_m,p50_m,p75_m,max_m,test_set\n{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{}\n",
            self.system,
            self.errors.len(),
            self.excluded,
            q.min,
            q.p25,
            q.p50,
            q.p75,
            q.max,
            self.test_set.as_deref().unwrap_or("")
        )
    }

    pub fn cdf_csv(&self) -> String {
        let mut out = String::from("error_m,fraction\n");
        for (t, f) in self.cdf() {
            let _ = writeln!(out, "{t},{f:.6}");
        }
        out
    }

    /// Parses the output of [`ErrorReport::summary_csv`] (quantiles only).
    pub fn parse_summary_csv(text: &str) -> Result<Self, String> {
        let line = text.lines().nth(1).ok_or("summary CSV has no data row")?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(format!("expected 9 columns, got {}", f.len()));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|e| format!("column {i}: {e}"));
        let mut r = ErrorReport::from_quantiles(
            f[0],
            Quantiles { min: num(3)?, p25: num(4)?, p50: num(5)?, p75: num(6)?, max: num(7)? },
        );
        r.excluded = f[2].parse().map_err(|e| format!("excluded: {e}"))?;
        r.test_set = (!f[8].is_empty()).then(|| f[8].to_string());
        Ok(r)
    }
}

/// Stable identifier of a test set (timestamps and fixes of its scans).
pub fn test_set_digest(scans: &[RawScan]) -> String {
    let mut h = Sha256::new();
    for s in scans {
        h.update(s.timestamp_s.to_le_bytes());
        h.update(s.location.lat_deg.to_le_bytes());
        h.update(s.location.lon_deg.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Localizes every test scan and measures the planar distance to its truth.
pub fn evaluate(
    system: &str,
    localizer: &dyn Localizer,
    test: &[RawScan],
    truth: &[GeoPoint],
) -> Result<ErrorReport, EvalError> {
    if test.len() != truth.len() {
        return Err(EvalError::TruthMismatch { scans: test.len(), truth: truth.len() });
    }
    let grid = localizer.grid();
    let mut errors = Vec::with_capacity(test.len());
    let mut excluded = 0;
    for (scan, t) in test.iter().zip(truth) {
        match localizer.locate(scan) {
            Ok(est) => {
                let t_local = grid
                    .to_local(*t)
                    .map_err(|e| InferError::Model(crate::model::ModelError::Format(e.to_string())))?;
                errors.push(est.local.distance(&t_local));
            }
            Err(InferError::NoKnownTowers) => excluded += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if excluded > 0 {
        log::warn!("{system}: {excluded} test scans heard no known tower and were excluded");
    }
    ErrorReport::from_errors(system, errors, excluded, Some(test_set_digest(test)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub quantile: &'static str,
    pub deeploc: f64,
    pub baseline: f64,
    /// `(baseline - deeploc) / deeploc`, in percent.
    pub delta_pct: f64,
}

pub fn compare(deeploc: &ErrorReport, baseline: &ErrorReport) -> Result<Vec<ComparisonRow>, EvalError> {
    if deeploc.test_set != baseline.test_set {
        return Err(EvalError::MismatchedTestSets);
    }
    Ok(Quantiles::NAMES
        .iter()
        .zip(deeploc.quantiles.as_array().into_iter().zip(baseline.quantiles.as_array()))
        .map(|(&quantile, (d, b))| ComparisonRow {
            quantile,
            deeploc: d,
            baseline: b,
            delta_pct: if d == b { 0.0 } else { (b - d) / d * 100.0 },
        })
        .collect())
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("quantile,deeploc_m,baseline_m,delta_pct\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.4},{:.4},{:.2}", r.quantile, r.deeploc, r.baseline, r.delta_pct);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_disjointness() {
        let (a, b) = split_indices(1000, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (800, 200));
        assert_eq!(split_indices(1000, 0.8, 3).unwrap(), (a.clone(), b.clone()));
        assert!(a.iter().all(|i| !b.contains(i)));
        assert!(split_indices(10, 1.0, 1).is_err());
        assert!(split_indices(10, 0.0, 1).is_err());
        assert!(matches!(split_indices(1, 0.5, 1), Err(EvalError::EmptySide(_))));
    }

    #[test]
    fn nearest_rank_convention() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(nearest_rank(&v, 0.25), 1.0);
        assert_eq!(nearest_rank(&v, 0.5), 2.0);
        assert_eq!(nearest_rank(&v, 0.75), 3.0);
        assert_eq!(nearest_rank(&v, 1.0), 4.0);
        assert_eq!(nearest_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5), 3.0);
    }

    #[test]
    fn cdf_reaches_one() {
        let r = ErrorReport::from_errors("x", vec![0.0, 1.5, 2.0, 7.2], 0, None).unwrap();
        let cdf = r.cdf();
        assert_eq!(cdf.first(), Some(&(0, 0.25)));
        assert_eq!(cdf.last(), Some(&(8, 1.0)));
        assert!(cdf.windows(2).all(|w| w[0].1 <= w[1].1));
        assert_eq!(cdf[2], (2, 0.75));
    }

    #[test]
    fn compare_identical_is_zero() {
        let r = ErrorReport::from_errors("x", vec![1.0, 5.0, 9.0], 0, Some("abc".into())).unwrap();
        let rows = compare(&r, &r).unwrap();
        assert!(rows.iter().all(|row| row.delta_pct == 0.0));
        let other = ErrorReport { test_set: Some("def".into()), ..r.clone() };
        assert!(matches!(compare(&r, &other), Err(EvalError::MismatchedTestSets)));
    }

    #[test]
    fn summary_csv_round_trip() {
        let r = ErrorReport::from_errors("deeploc", vec![1.25, 5.5, 9.0], 2, Some("abc".into())).unwrap();
        let back = ErrorReport::parse_summary_csv(&r.summary_csv()).unwrap();
        assert_eq!(back.quantiles, r.quantiles);
        assert_eq!(back.test_set, r.test_set);
        assert_eq!(back.excluded, 2);
    }
}
