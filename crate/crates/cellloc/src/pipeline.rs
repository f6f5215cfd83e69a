//! End-to-end experiment runs: corpus preparation, DeepLoc and baseline
//! training, evaluation, and parameter sweeps.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{build_training_set, spatial_augment, AugmentConfig, Augmentation, TrainingSet};
use crate::baseline::{train_histograms, train_histograms_from_samples, BaselineError, HistogramConfig, HistogramModel};
use crate::eval::{evaluate, split_indices, BaselineLocalizer, ErrorReport, EvalError, Quantiles};
use crate::geo::{GeoPoint, GridError, VirtualGrid};
use crate::ingest::{IngestError, RawScan, RssRange, TowerIndex};
use crate::model::{FingerprintModel, Mlp, ModelError, TrainReport, TrainingConfig, DEFAULT_HIDDEN};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("configuration: {0}")]
    Config(String),
}

/// Where test-time ground truth comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthSource {
    /// The simulator's true positions.
    #[default]
    Oracle,
    /// The (noisy) GPS fix recorded with each scan.
    Gps,
}

impl FromStr for TruthSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(TruthSource::Oracle),
            "gps" => Ok(TruthSource::Gps),
            other => Err(format!("unknown truth source '{other}' (gps|oracle)")),
        }
    }
}

/// Every tunable of a run. Keys match the config-file names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid_cell_length_m: f64,
    pub padding_m: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub hidden: Vec<usize>,
    pub augmentation: Augmentation,
    pub tower_density_pct: f64,
    /// Raw training scans to use; `None` keeps the whole training split.
    pub n_samples: Option<usize>,
    pub split_ratio: f64,
    pub rss_floor_dbm: f64,
    pub rss_ceil_dbm: f64,
    pub bin_width_db: f64,
    pub smoothing: f64,
    /// Feed scan-augmented vectors to the baseline as well.
    pub baseline_scan_augmented: bool,
    pub truth: TruthSource,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let range = RssRange::default();
        let train = TrainingConfig::default();
        ExperimentConfig {
            grid_cell_length_m: 100.0,
            padding_m: 0.0,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            dropout_rate: train.dropout_rate,
            hidden: DEFAULT_HIDDEN.to_vec(),
            augmentation: Augmentation::Both,
            tower_density_pct: 100.0,
            n_samples: None,
            split_ratio: 0.8,
            rss_floor_dbm: range.floor_dbm,
            rss_ceil_dbm: range.ceil_dbm,
            bin_width_db: 4.0,
            smoothing: 1.0,
            baseline_scan_augmented: false,
            truth: TruthSource::Oracle,
            seed: 7,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn rss_range(&self) -> Result<RssRange, PipelineError> {
        Ok(RssRange::new(self.rss_floor_dbm, self.rss_ceil_dbm)?)
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            dropout_rate: self.dropout_rate,
            seed: self.seed,
        }
    }

    pub fn histogram(&self) -> Result<HistogramConfig, PipelineError> {
        Ok(HistogramConfig { bin_width_db: self.bin_width_db, smoothing: self.smoothing, rss_range: self.rss_range()? })
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig::from(self.augmentation)
    }
}

/// Scans paired with their ground truth (oracle positions when available).
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub scans: Vec<RawScan>,
    pub truth: Vec<GeoPoint>,
}

impl Corpus {
    pub fn new(scans: Vec<RawScan>, truth: Vec<GeoPoint>) -> Result<Self, PipelineError> {
        if scans.len() != truth.len() {
            return Err(EvalError::TruthMismatch { scans: scans.len(), truth: truth.len() }.into());
        }
        Ok(Corpus { scans, truth })
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Corpus {
        Corpus {
            scans: idx.iter().map(|&i| self.scans[i].clone()).collect(),
            truth: idx.iter().map(|&i| self.truth[i]).collect(),
        }
    }

    pub fn split(&self, ratio: f64, seed: u64) -> Result<(Corpus, Corpus), PipelineError> {
        let (a, b) = split_indices(self.len(), ratio, seed)?;
        Ok((self.select(&a), self.select(&b)))
    }

    /// First `n` scans of a seeded permutation, kept in corpus order.
    pub fn subsample(&self, n: usize, seed: u64) -> Corpus {
        if n >= self.len() {
            return self.clone();
        }
        let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), self.len(), n).into_vec();
        idx.sort_unstable();
        self.select(&idx)
    }

    /// Keeps a seeded `pct` percent of the distinct towers; readings from
    /// the others are removed and scans left empty are dropped.
    pub fn thin_towers(&self, pct: f64, seed: u64) -> Corpus {
        if pct >= 100.0 {
            return self.clone();
        }
        let ids: Vec<&str> = self
            .scans
            .iter()
            .flat_map(|s| s.readings.iter().map(|r| r.tower_id.as_str()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let keep_n = ((ids.len() as f64 * pct / 100.0).round() as usize).clamp(1, ids.len());
        let kept: BTreeSet<&str> = sample(&mut ChaCha8Rng::seed_from_u64(seed), ids.len(), keep_n)
            .into_iter()
            .map(|i| ids[i])
            .collect();
        let mut out = Corpus::default();
        for (scan, truth) in self.scans.iter().zip(&self.truth) {
            let mut s = scan.clone();
            s.readings.retain(|r| kept.contains(r.tower_id.as_str()));
            if !s.readings.is_empty() {
                out.scans.push(s);
                out.truth.push(*truth);
            }
        }
        out
    }
}

/// Grid covering every training fix.
pub fn grid_for(scans: &[RawScan], cfg: &ExperimentConfig) -> Result<VirtualGrid, PipelineError> {
    Ok(VirtualGrid::covering(scans.iter().map(|s| s.location), cfg.grid_cell_length_m, cfg.padding_m)?)
}

#[derive(Debug, Clone)]
pub struct TrainedDeepLoc {
    pub model: FingerprintModel,
    pub report: TrainReport,
    pub n_samples: usize,
    pub dropped_out_of_extent: usize,
}

pub fn train_deeploc(train: &[RawScan], cfg: &ExperimentConfig) -> Result<TrainedDeepLoc, PipelineError> {
    let grid = grid_for(train, cfg)?;
    let towers = TowerIndex::build(train)?;
    let range = cfg.rss_range()?;
    let aug = cfg.augment();
    aug.validate().map_err(PipelineError::Config)?;
    let TrainingSet { samples, dropped_out_of_extent, .. } = build_training_set(train, &grid, &towers, range, &aug);
    log::info!(
        "training on {} samples from {} scans (M = {}, K = {})",
        samples.len(),
        train.len(),
        towers.len(),
        grid.len()
    );
    let mut net = Mlp::init(towers.len(), grid.len(), &cfg.hidden, cfg.dropout_rate, cfg.seed)?;
    let report = net.train(&samples, &cfg.training())?;
    Ok(TrainedDeepLoc {
        model: FingerprintModel::new(net, towers, range, grid)?,
        report,
        n_samples: samples.len(),
        dropped_out_of_extent,
    })
}

#[derive(Debug, Clone)]
pub struct TrainedBaseline {
    pub model: HistogramModel,
    pub grid: VirtualGrid,
}

impl TrainedBaseline {
    pub fn localizer(&self) -> BaselineLocalizer<'_> {
        BaselineLocalizer { model: &self.model, grid: &self.grid }
    }
}

/// Histogram baseline over the same grid and spatial labels DeepLoc sees.
pub fn train_baseline(train: &[RawScan], cfg: &ExperimentConfig) -> Result<TrainedBaseline, PipelineError> {
    let grid = grid_for(train, cfg)?;
    let towers = TowerIndex::build(train)?;
    let hist = cfg.histogram()?;
    let model = if cfg.baseline_scan_augmented {
        let set = build_training_set(train, &grid, &towers, hist.rss_range, &cfg.augment());
        train_histograms_from_samples(&set.samples, &grid, &towers, hist)?
    } else {
        let spatial = cfg.augmentation.spatial();
        let pairs: Vec<(RawScan, _)> = train
            .iter()
            .filter_map(|s| spatial_augment(s, &grid, spatial).map(|cells| (s, cells)))
            .flat_map(|(s, cells)| cells.into_iter().map(move |c| (s.clone(), c)))
            .collect();
        train_histograms(&pairs, &grid, &towers, hist)?
    };
    Ok(TrainedBaseline { model, grid })
}

/// Ground truth for `test` under the configured protocol.
pub fn truth_for(test: &Corpus, source: TruthSource) -> Vec<GeoPoint> {
    match source {
        TruthSource::Oracle => test.truth.clone(),
        TruthSource::Gps => test.scans.iter().map(|s| s.location).collect(),
    }
}

/// Applies density and sample-count settings, then splits.
pub fn prepare(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<(Corpus, Corpus), PipelineError> {
    let thinned = corpus.thin_towers(cfg.tower_density_pct, cfg.seed ^ 0xD5);
    let (train, test) = thinned.split(cfg.split_ratio, cfg.seed)?;
    let train = match cfg.n_samples {
        Some(n) => train.subsample(n, cfg.seed ^ 0x5A),
        None => train,
    };
    Ok((train, test))
}

/// Trains DeepLoc on the prepared split and reports its test error.
pub fn run_deeploc(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<(TrainedDeepLoc, ErrorReport), PipelineError> {
    let (train, test) = prepare(corpus, cfg)?;
    let trained = train_deeploc(&train.scans, cfg)?;
    let report = evaluate("deeploc", &trained.model, &test.scans, &truth_for(&test, cfg.truth))?;
    Ok((trained, report))
}

pub fn run_baseline(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<(TrainedBaseline, ErrorReport), PipelineError> {
    let (train, test) = prepare(corpus, cfg)?;
    let trained = train_baseline(&train.scans, cfg)?;
    let report = evaluate("baseline", &trained.localizer(), &test.scans, &truth_for(&test, cfg.truth))?;
    Ok((trained, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Augmentation,
    GridCellLengthM,
    NSamples,
    Epochs,
    LearningRate,
    TowerDensityPct,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Augmentation => "augmentation",
            SweepParameter::GridCellLengthM => "grid_cell_length_m",
            SweepParameter::NSamples => "n_samples",
            SweepParameter::Epochs => "epochs",
            SweepParameter::LearningRate => "learning_rate",
            SweepParameter::TowerDensityPct => "tower_density_pct",
        }
    }

    /// Default value list for each parameter.
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepParameter::Augmentation => &["none", "spatial", "scan", "both"],
            SweepParameter::GridCellLengthM => &["50", "100", "200", "300", "400", "500"],
            SweepParameter::NSamples => &["5000", "7500", "10000", "12500", "15000"],
            SweepParameter::Epochs => &["500", "1000", "1500", "2000", "2500", "3000"],
            SweepParameter::LearningRate => &["0.001", "0.005", "0.01"],
            SweepParameter::TowerDensityPct => &["25", "50", "75", "100"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    fn apply(self, cfg: &mut ExperimentConfig, value: &str) -> Result<(), PipelineError> {
        let bad = |e: &dyn std::fmt::Display| PipelineError::Config(format!("{}={value}: {e}", self.name()));
        match self {
            SweepParameter::Augmentation => cfg.augmentation = value.parse().map_err(|e: String| bad(&e))?,
            SweepParameter::GridCellLengthM => cfg.grid_cell_length_m = value.parse().map_err(|e| bad(&e))?,
            SweepParameter::NSamples => cfg.n_samples = Some(value.parse().map_err(|e| bad(&e))?),
            SweepParameter::Epochs => cfg.epochs = value.parse().map_err(|e| bad(&e))?,
            SweepParameter::LearningRate => cfg.learning_rate = value.parse().map_err(|e| bad(&e))?,
            SweepParameter::TowerDensityPct => cfg.tower_density_pct = value.parse().map_err(|e| bad(&e))?,
        }
        Ok(())
    }

    fn sort_key(self, value: &str) -> f64 {
        match self {
            SweepParameter::Augmentation => value
                .parse::<Augmentation>()
                .map(|a| Augmentation::ALL.iter().position(|&x| x == a).unwrap_or(0) as f64)
                .unwrap_or(f64::INFINITY),
            _ => value.parse::<f64>().unwrap_or(f64::INFINITY),
        }
    }
}

impl FromStr for SweepParameter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "augmentation" => Ok(SweepParameter::Augmentation),
            "grid_cell_length_m" | "G_s" | "gs" => Ok(SweepParameter::GridCellLengthM),
            "n_samples" | "N_s" | "ns" => Ok(SweepParameter::NSamples),
            "epochs" | "N_e" | "ne" => Ok(SweepParameter::Epochs),
            "learning_rate" | "alpha" => Ok(SweepParameter::LearningRate),
            "tower_density_pct" | "D_s" | "ds" => Ok(SweepParameter::TowerDensityPct),
            other => Err(format!("unknown sweep parameter '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    #[serde(default)]
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub result: Result<Quantiles, String>,
}

/// Retrains once per value with every other setting at `base`. A failing
/// point is recorded and the sweep continues. Rows come back sorted by value.
pub fn run_sweep(spec: &SweepSpec, corpus: &Corpus, base: &ExperimentConfig) -> Vec<SweepRow> {
    let mut values = if spec.values.is_empty() { spec.parameter.default_values() } else { spec.values.clone() };
    values.sort_by(|a, b| spec.parameter.sort_key(a).total_cmp(&spec.parameter.sort_key(b)));
    values
        .into_iter()
        .map(|value| {
            let mut cfg = base.clone();
            let result = spec
                .parameter
                .apply(&mut cfg, &value)
                .and_then(|_| run_deeploc(corpus, &cfg))
                .map(|(_, report)| report.quantiles)
                .map_err(|e| e.to_string());
            if let Err(e) = &result {
                log::warn!("sweep point {}={value} failed: {e}", spec.parameter.name());
            }
            SweepRow { value, result }
        })
        .collect()
}

pub fn sweep_csv(parameter: SweepParameter, rows: &[SweepRow]) -> String {
    let mut out = format!("{},median_m,min_m,p25_m,p75_m,max_m,error\n", parameter.name());
    for row in rows {
        match &row.result {
            Ok(q) => {
                let _ = writeln!(
                    out,
                    "{},{:.4},{:.4},{:.4},{:.4},{:.4},",
                    row.value, q.p50, q.min, q.p25, q.p75, q.max
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{},,,,,,\"{}\"", row.value, e.replace('"', "'"));
            }
        }
    }
    out
}
