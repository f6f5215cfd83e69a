//! Histogram fingerprint baseline with per-tower independence.
//!
//! For every (cell, tower) pair the model keeps a smoothed histogram of RSS
//! over fixed-width dBm bins plus one extra bin for "not heard". A scan is
//! scored per cell as `log prior + sum_j log P(obs_j | cell)` over every
//! tower in the index, then normalized with log-sum-exp.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::LabeledSample;
use crate::geo::{CellId, VirtualGrid};
use crate::infer::{estimate_from_posterior, Fusion, InferError, LocationEstimate};
use crate::ingest::{RawScan, RssRange, TowerIndex};
use crate::model::Posterior;

pub const HISTOGRAM_FORMAT: &str = "cellloc-histogram-model";
pub const HISTOGRAM_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no training samples")]
    Empty,
    #[error("invalid histogram configuration: {0}")]
    InvalidConfig(String),
    #[error("label {label} out of range for K = {k}")]
    InvalidLabel { label: usize, k: usize },
    #[error("histogram file: {0}")]
    Format(String),
    #[error("histogram file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Infer(#[from] InferError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bin_width_db: f64,
    /// Additive smoothing count per bin.
    pub smoothing: f64,
    pub rss_range: RssRange,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig { bin_width_db: 4.0, smoothing: 1.0, rss_range: RssRange::default() }
    }
}

impl HistogramConfig {
    fn validate(&self) -> Result<(), BaselineError> {
        if !(self.bin_width_db.is_finite() && self.bin_width_db > 0.0) {
            return Err(BaselineError::InvalidConfig(format!("bin width {}", self.bin_width_db)));
        }
        if !(self.smoothing.is_finite() && self.smoothing > 0.0) {
            return Err(BaselineError::InvalidConfig(format!("smoothing {}", self.smoothing)));
        }
        Ok(())
    }

    /// Number of RSS bins, excluding the unheard bin.
    pub fn rss_bins(&self) -> usize {
        let span = self.rss_range.ceil_dbm - self.rss_range.floor_dbm;
        ((span / self.bin_width_db).ceil() as usize).max(1)
    }

    /// Total bins per histogram; the last one is "unheard".
    pub fn total_bins(&self) -> usize {
        self.rss_bins() + 1
    }

    /// Bin of an observation; values outside the range go to the end bins.
    pub fn bin_of(&self, rss_dbm: Option<f64>) -> usize {
        match rss_dbm {
            None => self.rss_bins(),
            Some(r) => {
                let b = ((r - self.rss_range.floor_dbm) / self.bin_width_db).floor();
                (b.max(0.0) as usize).min(self.rss_bins() - 1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramModel {
    pub config: HistogramConfig,
    pub towers: TowerIndex,
    pub n_cells: usize,
    /// Raw (unsmoothed) counts, `[cell][tower][bin]` flattened.
    pub counts: Vec<f64>,
    /// Training samples per cell.
    pub cell_samples: Vec<usize>,
}

impl HistogramModel {
    fn offset(&self, cell: usize, tower: usize) -> usize {
        (cell * self.towers.len() + tower) * self.config.total_bins()
    }

    /// Smoothed probability of `bin` for (cell, tower).
    pub fn probability(&self, cell: usize, tower: usize, bin: usize) -> f64 {
        let b = self.config.total_bins();
        let lambda = self.config.smoothing;
        let count = self.counts[self.offset(cell, tower) + bin];
        (count + lambda) / (self.cell_samples[cell] as f64 + lambda * b as f64)
    }

    pub fn histogram(&self, cell: CellId, tower: usize) -> Vec<f64> {
        (0..self.config.total_bins()).map(|b| self.probability(cell.0, tower, b)).collect()
    }

    /// Cell prior: share of training samples.
    pub fn prior(&self) -> Vec<f64> {
        let total: usize = self.cell_samples.iter().sum();
        self.cell_samples.iter().map(|&c| c as f64 / total as f64).collect()
    }

    fn observe(&mut self, cell: usize, obs: &[Option<f64>]) {
        let bins: Vec<usize> = obs.iter().map(|&o| self.config.bin_of(o)).collect();
        for (tower, bin) in bins.into_iter().enumerate() {
            let at = self.offset(cell, tower) + bin;
            self.counts[at] += 1.0;
        }
        self.cell_samples[cell] += 1;
    }

    fn empty(config: HistogramConfig, towers: TowerIndex, n_cells: usize) -> Self {
        let len = n_cells * towers.len() * config.total_bins();
        HistogramModel { config, towers, n_cells, counts: vec![0.0; len], cell_samples: vec![0; n_cells] }
    }

    /// Per-tower observations of a scan in index order; unknown towers are
    /// ignored.
    pub fn observations(&self, scan: &RawScan) -> (Vec<Option<f64>>, usize) {
        let mut obs = vec![None; self.towers.len()];
        let mut known = 0;
        for r in &scan.readings {
            if let Some(j) = self.towers.column(&r.tower_id) {
                obs[j] = Some(r.rss_dbm);
                known += 1;
            }
        }
        (obs, known)
    }

    pub fn posterior_of_observations(&self, obs: &[Option<f64>]) -> Posterior {
        let bins: Vec<usize> = obs.iter().map(|&o| self.config.bin_of(o)).collect();
        let prior = self.prior();
        let log_post: Vec<f64> = (0..self.n_cells)
            .map(|c| {
                if prior[c] == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let mut lp = prior[c].ln();
                for (tower, &bin) in bins.iter().enumerate() {
                    lp += self.probability(c, tower, bin).ln();
                }
                lp
            })
            .collect();
        let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = log_post.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = p.iter().sum();
        for v in &mut p {
            *v /= sum;
        }
        Posterior(p)
    }

    pub fn save<W: Write>(&self, sink: W) -> Result<(), BaselineError> {
        self.save_with_grid(None, sink)
    }

    /// Saves the tables together with the grid they were trained on.
    pub fn save_with_grid<W: Write>(&self, grid: Option<&VirtualGrid>, mut sink: W) -> Result<(), BaselineError> {
        let file = HistogramFile {
            format: HISTOGRAM_FORMAT.into(),
            version: HISTOGRAM_VERSION,
            bin_width_db: self.config.bin_width_db,
            smoothing: self.config.smoothing,
            rss_floor_dbm: self.config.rss_range.floor_dbm,
            rss_ceil_dbm: self.config.rss_range.ceil_dbm,
            towers: self.towers.ids().to_vec(),
            n_cells: self.n_cells,
            cell_samples: self.cell_samples.clone(),
            counts: self.counts.clone(),
            grid: grid.cloned(),
        };
        serde_json::to_writer(&mut sink, &file).map_err(|e| BaselineError::Format(e.to_string()))?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    pub fn load<R: Read>(source: R) -> Result<Self, BaselineError> {
        Self::load_with_grid(source).map(|(m, _)| m)
    }

    pub fn load_with_grid<R: Read>(source: R) -> Result<(Self, Option<VirtualGrid>), BaselineError> {
        let f: HistogramFile =
            serde_json::from_reader(source).map_err(|e| BaselineError::Format(e.to_string()))?;
        if f.format != HISTOGRAM_FORMAT {
            return Err(BaselineError::Format(format!("unexpected format tag '{}'", f.format)));
        }
        if f.version != HISTOGRAM_VERSION {
            return Err(BaselineError::Format(format!("unsupported version {}", f.version)));
        }
        let range = RssRange::new(f.rss_floor_dbm, f.rss_ceil_dbm)
            .map_err(|e| BaselineError::Format(e.to_string()))?;
        let config = HistogramConfig { bin_width_db: f.bin_width_db, smoothing: f.smoothing, rss_range: range };
        config.validate()?;
        let towers = TowerIndex::from_ids(f.towers);
        let grid = match f.grid {
            Some(g) => Some(
                VirtualGrid::from_parts(g.origin, g.cell_length_m, g.n_cols, g.n_rows)
                    .map_err(|e| BaselineError::Format(e.to_string()))?,
            ),
            None => None,
        };
        if grid.as_ref().is_some_and(|g| g.len() != f.n_cells) {
            return Err(BaselineError::Format("grid size does not match n_cells".into()));
        }
        let model = HistogramModel {
            n_cells: f.n_cells,
            counts: f.counts,
            cell_samples: f.cell_samples,
            towers,
            config,
        };
        if model.cell_samples.len() != model.n_cells
            || model.counts.len() != model.n_cells * model.towers.len() * config.total_bins()
        {
            return Err(BaselineError::Format("table sizes do not match the header".into()));
        }
        Ok((model, grid))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HistogramFile {
    format: String,
    version: u32,
    bin_width_db: f64,
    smoothing: f64,
    rss_floor_dbm: f64,
    rss_ceil_dbm: f64,
    towers: Vec<String>,
    n_cells: usize,
    cell_samples: Vec<usize>,
    counts: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<VirtualGrid>,
}

/// Counts RSS histograms from labeled scans.
pub fn train_histograms(
    samples: &[(RawScan, CellId)],
    grid: &VirtualGrid,
    index: &TowerIndex,
    config: HistogramConfig,
) -> Result<HistogramModel, BaselineError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(BaselineError::Empty);
    }
    let k = grid.len();
    let mut model = HistogramModel::empty(config, index.clone(), k);
    for (scan, cell) in samples {
        if cell.0 >= k {
            return Err(BaselineError::InvalidLabel { label: cell.0, k });
        }
        let (obs, _) = model.observations(scan);
        model.observe(cell.0, &obs);
    }
    Ok(model)
}

/// Counts histograms from feature vectors (e.g. scan-augmented ones),
/// mapping normalized values back to dBm with the configured range.
pub fn train_histograms_from_samples(
    samples: &[LabeledSample],
    grid: &VirtualGrid,
    index: &TowerIndex,
    config: HistogramConfig,
) -> Result<HistogramModel, BaselineError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(BaselineError::Empty);
    }
    let k = grid.len();
    let range = config.rss_range;
    let mut model = HistogramModel::empty(config, index.clone(), k);
    for s in samples {
        if s.label.0 >= k {
            return Err(BaselineError::InvalidLabel { label: s.label.0, k });
        }
        let obs: Vec<Option<f64>> = s
            .features
            .as_slice()
            .iter()
            .map(|&v| (v != 0.0).then(|| range.floor_dbm + v * (range.ceil_dbm - range.floor_dbm)))
            .collect();
        model.observe(s.label.0, &obs);
    }
    Ok(model)
}

pub fn baseline_posterior(model: &HistogramModel, scan: &RawScan) -> Posterior {
    let (obs, _) = model.observations(scan);
    model.posterior_of_observations(&obs)
}

pub fn baseline_localize(
    model: &HistogramModel,
    grid: &VirtualGrid,
    scan: &RawScan,
) -> Result<LocationEstimate, BaselineError> {
    let (obs, known) = model.observations(scan);
    if known == 0 {
        return Err(InferError::NoKnownTowers.into());
    }
    let posterior = model.posterior_of_observations(&obs);
    Ok(estimate_from_posterior(grid, posterior, known, Fusion::AllCells)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::ingest::Reading;

    fn scan(readings: &[(&str, f64)]) -> RawScan {
        RawScan {
            timestamp_s: 0.0,
            location: GeoPoint { lat_deg: 30.0, lon_deg: 31.0 },
            confidence_radius_m: 0.0,
            readings: readings
                .iter()
                .map(|(t, r)| Reading { tower_id: t.to_string(), rss_dbm: *r })
                .collect(),
        }
    }

    fn grid(cols: usize) -> VirtualGrid {
        VirtualGrid::from_parts(GeoPoint::new(30.0, 31.0).unwrap(), 100.0, cols, 1).unwrap()
    }

    #[test]
    fn bins_cover_range() {
        let c = HistogramConfig::default();
        assert_eq!(c.rss_bins(), 16);
        assert_eq!(c.bin_of(Some(-113.0)), 0);
        assert_eq!(c.bin_of(Some(-200.0)), 0);
        assert_eq!(c.bin_of(Some(-51.0)), 15);
        assert_eq!(c.bin_of(Some(-20.0)), 15);
        assert_eq!(c.bin_of(None), 16);
    }

    #[test]
    fn dominant_bin_and_unheard() {
        let idx = TowerIndex::from_ids(["A".to_string(), "B".to_string()]);
        let g = grid(1);
        let samples: Vec<_> = (0..20).map(|_| (scan(&[("A", -80.0)]), CellId(0))).collect();
        let m = train_histograms(&samples, &g, &idx, HistogramConfig::default()).unwrap();
        let h = m.histogram(CellId(0), 0);
        let hit = HistogramConfig::default().bin_of(Some(-80.0));
        assert!(h.iter().enumerate().all(|(b, &p)| b == hit || p < h[hit]));
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let hb = m.histogram(CellId(0), 1);
        let unheard = *hb.last().unwrap();
        assert!(hb[..hb.len() - 1].iter().all(|&p| p < unheard));
    }

    #[test]
    fn empty_cell_is_uniform() {
        let idx = TowerIndex::from_ids(["A".to_string()]);
        let g = grid(2);
        let m = train_histograms(&[(scan(&[("A", -80.0)]), CellId(0))], &g, &idx, HistogramConfig::default())
            .unwrap();
        let b = HistogramConfig::default().total_bins();
        assert!(m.histogram(CellId(1), 0).iter().all(|&p| (p - 1.0 / b as f64).abs() < 1e-15));
    }

    #[test]
    fn single_cell_posterior_is_certain() {
        let idx = TowerIndex::from_ids(["A".to_string()]);
        let m = train_histograms(&[(scan(&[("A", -80.0)]), CellId(0))], &grid(1), &idx, HistogramConfig::default())
            .unwrap();
        assert_eq!(baseline_posterior(&m, &scan(&[("A", -60.0)])).0, vec![1.0]);
    }

    #[test]
    fn heard_tower_favors_its_cell() {
        let idx = TowerIndex::from_ids(["A".to_string(), "B".to_string()]);
        let mut samples: Vec<_> = (0..10).map(|_| (scan(&[("A", -70.0), ("B", -90.0)]), CellId(0))).collect();
        samples.extend((0..10).map(|_| (scan(&[("B", -90.0)]), CellId(1))));
        let m = train_histograms(&samples, &grid(2), &idx, HistogramConfig::default()).unwrap();
        let p = baseline_posterior(&m, &scan(&[("A", -70.0), ("B", -90.0)]));
        assert!(p.0[0] > p.0[1]);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let idx = TowerIndex::from_ids(["A".to_string()]);
        assert!(matches!(
            train_histograms(&[], &grid(1), &idx, HistogramConfig::default()),
            Err(BaselineError::Empty)
        ));
    }
}
