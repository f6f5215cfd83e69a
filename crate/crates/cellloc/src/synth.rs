//! Synthetic radio testbed.
//!
//! Towers are scattered over a rectangular area with a minimum separation.
//! Received power follows a log-distance path-loss law with two random
//! terms: a static, spatially correlated shadowing field per tower (the
//! location-specific signature fingerprinting relies on) and independent
//! per-sample fading. Ground truth comes from random-waypoint walks sampled
//! once per second; GPS fixes add 2-D Gaussian error whose per-sample sigma
//! also sets the reported confidence radius.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoPoint, LocalPoint};
use crate::ingest::{RawScan, Reading, MAX_READINGS};

pub const URBAN_PRESET: &str = include_str!("../presets/urban.toml");
pub const RURAL_PRESET: &str = include_str!("../presets/rural.toml");

/// First timestamp of generated traces (seconds since epoch).
const BASE_TIMESTAMP_S: f64 = 1_500_000_000.0;
/// Random cosines per shadowing field.
const SHADOWING_TERMS: usize = 48;
const PLACEMENT_ATTEMPTS: usize = 10_000;
const MAX_SILENT_STEPS: usize = 100_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("could not place {wanted} towers {sep} m apart in the area (placed {placed})")]
    InfeasibleSeparation { wanted: usize, placed: usize, sep: f64 },
    #[error("unknown preset '{0}' (urban|rural)")]
    UnknownPreset(String),
    #[error("spec file: {0}")]
    Parse(String),
}

/// Per-sample GPS error model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsNoiseModel {
    pub sigma_min_m: f64,
    pub sigma_max_m: f64,
    /// Confidence radius = calibration x sigma.
    pub calibration: f64,
}

impl Default for GpsNoiseModel {
    fn default() -> Self {
        // 2.45 sigma contains ~95% of a circular 2-D Gaussian.
        GpsNoiseModel { sigma_min_m: 2.0, sigma_max_m: 15.0, calibration: 2.45 }
    }
}

impl GpsNoiseModel {
    pub fn noiseless() -> Self {
        GpsNoiseModel { sigma_min_m: 0.0, sigma_max_m: 0.0, calibration: 2.45 }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let ok = self.sigma_min_m >= 0.0
            && self.sigma_max_m >= self.sigma_min_m
            && self.sigma_max_m.is_finite()
            && self.calibration > 0.0
            && self.calibration.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidSpec(format!("bad GPS noise model {self:?}")))
        }
    }
}

/// Parameters from which a [`RadioEnvironment`] is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub name: String,
    pub origin_lat_deg: f64,
    pub origin_lon_deg: f64,
    pub width_m: f64,
    pub height_m: f64,
    pub n_towers: usize,
    /// Received power at the reference distance.
    pub tx_power_dbm: f64,
    /// Towers draw their power uniformly from `tx_power_dbm ± spread`.
    #[serde(default)]
    pub tx_power_spread_db: f64,
    pub path_loss_exponent: f64,
    /// Per-sample fading standard deviation.
    pub sigma_db: f64,
    /// Standard deviation of the static shadowing field.
    #[serde(default)]
    pub shadowing_sigma_db: f64,
    #[serde(default = "default_decorrelation")]
    pub shadowing_decorrelation_m: f64,
    /// Standard deviation of an offset shared by every tower in one scan
    /// (device orientation, body loss).
    #[serde(default)]
    pub scan_offset_sigma_db: f64,
    #[serde(default = "default_threshold")]
    pub hearing_threshold_dbm: f64,
    #[serde(default = "default_max_audible")]
    pub max_audible: usize,
    /// Minimum tower spacing; defaults to half the mean spacing.
    #[serde(default)]
    pub min_separation_m: Option<f64>,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub gps: GpsNoiseModel,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    /// Samples per random-waypoint trajectory.
    #[serde(default = "default_trajectory_len")]
    pub trajectory_len: usize,
}

fn default_decorrelation() -> f64 {
    50.0
}
fn default_threshold() -> f64 {
    -113.0
}
fn default_max_audible() -> usize {
    MAX_READINGS
}
fn default_n_samples() -> usize {
    10_000
}
fn default_trajectory_len() -> usize {
    600
}

impl EnvironmentSpec {
    pub fn preset(name: &str) -> Result<Self, SynthError> {
        match name {
            "urban" => Self::from_toml(URBAN_PRESET),
            "rural" => Self::from_toml(RURAL_PRESET),
            other => Err(SynthError::UnknownPreset(other.to_string())),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let spec: EnvironmentSpec = toml::from_str(text).map_err(|e| SynthError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn area_km2(&self) -> f64 {
        self.width_m * self.height_m / 1e6
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if GeoPoint::new(self.origin_lat_deg, self.origin_lon_deg).is_err() {
            return bad("origin is not a valid coordinate");
        }
        if !(self.width_m > 0.0 && self.height_m > 0.0) {
            return bad("area must be positive");
        }
        if self.n_towers < 1 {
            return bad("at least one tower is required");
        }
        if !(2.0..=5.0).contains(&self.path_loss_exponent) {
            return bad("path-loss exponent must lie in [2, 5]");
        }
        if !(self.sigma_db >= 0.0 && self.shadowing_sigma_db >= 0.0 && self.scan_offset_sigma_db >= 0.0 && self.tx_power_spread_db >= 0.0) {
            return bad("noise parameters must be non-negative");
        }
        if self.shadowing_decorrelation_m <= 0.0 {
            return bad("decorrelation distance must be positive");
        }
        if !(1..=MAX_READINGS).contains(&self.max_audible) {
            return bad("max_audible must lie in [1, 7]");
        }
        if !(self.speed_min_mps > 0.0 && self.speed_max_mps >= self.speed_min_mps) {
            return bad("speed range must be positive");
        }
        if self.trajectory_len < 1 {
            return bad("trajectory_len must be at least 1");
        }
        self.gps.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub id: String,
    pub position: LocalPoint,
    pub tx_power_dbm: f64,
}

/// Static Gaussian-like random field built from random cosines; its
/// covariance approximates `sigma^2 exp(-d^2 / (2 L^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowingField {
    pub amplitude_db: f64,
    /// (kx, ky, phase) per term.
    pub terms: Vec<[f64; 3]>,
}

impl ShadowingField {
    fn generate<R: Rng>(sigma_db: f64, decorrelation_m: f64, rng: &mut R) -> Self {
        if sigma_db == 0.0 {
            return ShadowingField { amplitude_db: 0.0, terms: Vec::new() };
        }
        let freq = Normal::new(0.0, 1.0 / decorrelation_m).expect("positive scale");
        let terms = (0..SHADOWING_TERMS)
            .map(|_| {
                [freq.sample(rng), freq.sample(rng), rng.random_range(0.0..std::f64::consts::TAU)]
            })
            .collect();
        ShadowingField { amplitude_db: sigma_db * (2.0 / SHADOWING_TERMS as f64).sqrt(), terms }
    }

    pub fn at(&self, p: LocalPoint) -> f64 {
        self.amplitude_db * self.terms.iter().map(|[kx, ky, ph]| (kx * p.x_m + ky * p.y_m + ph).cos()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioEnvironment {
    pub name: String,
    /// Southwest corner of the area.
    pub origin: GeoPoint,
    pub width_m: f64,
    pub height_m: f64,
    pub towers: Vec<Tower>,
    pub path_loss_exponent: f64,
    pub reference_distance_m: f64,
    pub sigma_db: f64,
    pub scan_offset_sigma_db: f64,
    pub hearing_threshold_dbm: f64,
    pub max_audible: usize,
    pub shadowing: Vec<ShadowingField>,
    pub seed: u64,
}

pub fn generate_environment(spec: &EnvironmentSpec, seed: u64) -> Result<RadioEnvironment, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean_spacing = (spec.width_m * spec.height_m / spec.n_towers as f64).sqrt();
    let sep = spec.min_separation_m.unwrap_or(0.5 * mean_spacing);
    let mut positions: Vec<LocalPoint> = Vec::with_capacity(spec.n_towers);
    let mut attempts = 0;
    while positions.len() < spec.n_towers {
        if attempts == PLACEMENT_ATTEMPTS * spec.n_towers {
            return Err(SynthError::InfeasibleSeparation { wanted: spec.n_towers, placed: positions.len(), sep });
        }
        attempts += 1;
        let p = LocalPoint::new(rng.random_range(0.0..=spec.width_m), rng.random_range(0.0..=spec.height_m));
        if positions.iter().all(|q| q.distance(&p) >= sep) {
            positions.push(p);
        }
    }
    let towers: Vec<Tower> = positions
        .into_iter()
        .enumerate()
        .map(|(i, position)| {
            let jitter = if spec.tx_power_spread_db > 0.0 {
                rng.random_range(-spec.tx_power_spread_db..=spec.tx_power_spread_db)
            } else {
                0.0
            };
            Tower { id: format!("T{i:04}"), position, tx_power_dbm: spec.tx_power_dbm + jitter }
        })
        .collect();
    let shadowing = towers
        .iter()
        .map(|_| ShadowingField::generate(spec.shadowing_sigma_db, spec.shadowing_decorrelation_m, &mut rng))
        .collect();
    Ok(RadioEnvironment {
        name: spec.name.clone(),
        origin: GeoPoint::new(spec.origin_lat_deg, spec.origin_lon_deg)
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))?,
        width_m: spec.width_m,
        height_m: spec.height_m,
        towers,
        path_loss_exponent: spec.path_loss_exponent,
        reference_distance_m: 1.0,
        sigma_db: spec.sigma_db,
        scan_offset_sigma_db: spec.scan_offset_sigma_db,
        hearing_threshold_dbm: spec.hearing_threshold_dbm,
        max_audible: spec.max_audible,
        shadowing,
        seed,
    })
}

impl RadioEnvironment {
    /// Mean received power (path loss plus static shadowing), no fading.
    pub fn mean_rss(&self, p: LocalPoint, tower: usize) -> f64 {
        let t = &self.towers[tower];
        let d = t.position.distance(&p).max(self.reference_distance_m);
        let shadow = self.shadowing.get(tower).map_or(0.0, |f| f.at(p));
        t.tx_power_dbm - 10.0 * self.path_loss_exponent * (d / self.reference_distance_m).log10() + shadow
    }

    pub fn to_geo(&self, p: LocalPoint) -> GeoPoint {
        crate::geo::unproject(p, self.origin)
    }

    /// Readings of the strongest audible towers at `p`, strongest first.
    pub fn scan_at<R: Rng + ?Sized>(&self, p: LocalPoint, rng: &mut R) -> Vec<Reading> {
        let offset = if self.scan_offset_sigma_db > 0.0 {
            self.scan_offset_sigma_db * rng.sample::<f64, _>(rand_distr::StandardNormal)
        } else {
            0.0
        };
        let mut heard: Vec<(usize, f64)> = (0..self.towers.len())
            .filter_map(|t| sample_rss(self, p, t, offset, rng).map(|r| (t, r)))
            .collect();
        heard.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        heard.truncate(self.max_audible);
        heard
            .into_iter()
            .map(|(t, r)| Reading { tower_id: self.towers[t].id.clone(), rss_dbm: round_dbm(r) })
            .collect()
    }
}

/// RSS from `tower` at `p`, or `None` below the hearing threshold.
pub fn rss_at<R: Rng + ?Sized>(env: &RadioEnvironment, p: LocalPoint, tower: usize, rng: &mut R) -> Option<f64> {
    sample_rss(env, p, tower, 0.0, rng)
}

fn sample_rss<R: Rng + ?Sized>(
    env: &RadioEnvironment,
    p: LocalPoint,
    tower: usize,
    offset_db: f64,
    rng: &mut R,
) -> Option<f64> {
    let mut rss = env.mean_rss(p, tower) + offset_db;
    if env.sigma_db > 0.0 {
        let fading: f64 = rng.sample(rand_distr::StandardNormal);
        rss += env.sigma_db * fading;
    }
    (rss >= env.hearing_threshold_dbm).then_some(rss)
}

/// Phones report integer dBm.
fn round_dbm(r: f64) -> f64 {
    r.round()
}

/// A generated scan with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScan {
    pub scan: RawScan,
    pub truth: GeoPoint,
    pub truth_local: LocalPoint,
    pub gps_sigma_m: f64,
}

/// Random-waypoint traces at one sample per second. Each trajectory draws
/// from its own ChaCha stream, so output is identical for a given seed.
pub fn generate_traces(
    env: &RadioEnvironment,
    n_samples: usize,
    gps: &GpsNoiseModel,
    speed_mps: (f64, f64),
    trajectory_len: usize,
    seed: u64,
) -> Result<Vec<SyntheticScan>, SynthError> {
    gps.validate()?;
    if n_samples < 1 || trajectory_len < 1 {
        return Err(SynthError::InvalidSpec("n_samples and trajectory_len must be positive".into()));
    }
    let mut out = Vec::with_capacity(n_samples);
    let mut trajectory = 0u64;
    while out.len() < n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trajectory);
        let len = trajectory_len.min(n_samples - out.len());
        let t0 = BASE_TIMESTAMP_S + trajectory as f64 * 86_400.0;
        walk(env, gps, speed_mps, len, t0, &mut rng, &mut out)?;
        trajectory += 1;
    }
    Ok(out)
}

fn walk<R: Rng>(
    env: &RadioEnvironment,
    gps: &GpsNoiseModel,
    (vmin, vmax): (f64, f64),
    len: usize,
    t0: f64,
    rng: &mut R,
    out: &mut Vec<SyntheticScan>,
) -> Result<(), SynthError> {
    let random_point =
        |rng: &mut R| LocalPoint::new(rng.random_range(0.0..=env.width_m), rng.random_range(0.0..=env.height_m));
    let mut pos = random_point(rng);
    let mut target = random_point(rng);
    let mut speed = rng.random_range(vmin..=vmax);
    let mut step = 0;
    let mut silent = 0;
    while step < len {
        let readings = env.scan_at(pos, rng);
        if readings.is_empty() {
            silent += 1;
            if silent == MAX_SILENT_STEPS {
                return Err(SynthError::InvalidSpec("no tower audible along a trajectory".into()));
            }
        } else {
            silent = 0;
            let sigma = if gps.sigma_max_m > gps.sigma_min_m {
                rng.random_range(gps.sigma_min_m..=gps.sigma_max_m)
            } else {
                gps.sigma_min_m
            };
            let (ex, ey): (f64, f64) = if sigma > 0.0 {
                (rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal))
            } else {
                (0.0, 0.0)
            };
            let fix = LocalPoint::new(pos.x_m + sigma * ex, pos.y_m + sigma * ey);
            out.push(SyntheticScan {
                scan: RawScan {
                    timestamp_s: t0 + step as f64,
                    location: env.to_geo(fix),
                    confidence_radius_m: gps.calibration * sigma,
                    readings,
                },
                truth: env.to_geo(pos),
                truth_local: pos,
                gps_sigma_m: sigma,
            });
            step += 1;
        }
        // Advance one second along the current leg, turning at waypoints.
        let mut remaining = speed;
        loop {
            let d = pos.distance(&target);
            if d > remaining {
                pos.x_m += (target.x_m - pos.x_m) * remaining / d;
                pos.y_m += (target.y_m - pos.y_m) * remaining / d;
                break;
            }
            remaining -= d;
            pos = target;
            target = random_point(rng);
            speed = rng.random_range(vmin..=vmax);
        }
    }
    Ok(())
}

/// Grid padding that aligns the toy corpus's cells with its quadrants.
pub const TOY_PADDING_M: f64 = 5.0;

/// 200 m x 200 m square, one noiseless tower per corner, 400 scans on a
/// 10 m lattice offset 5 m from the edges. A grid covering the scans with
/// 5 m padding and 100 m cells has the quadrants as cells, each exactly the
/// set of points nearest one tower.
pub fn make_toy_corpus() -> (RadioEnvironment, Vec<SyntheticScan>) {
    let corners = [(0.0, 0.0), (200.0, 0.0), (0.0, 200.0), (200.0, 200.0)];
    let env = RadioEnvironment {
        name: "toy".into(),
        origin: GeoPoint { lat_deg: 30.0, lon_deg: 31.0 },
        width_m: 200.0,
        height_m: 200.0,
        towers: corners
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| Tower {
                id: format!("T{i:04}"),
                position: LocalPoint::new(x, y),
                tx_power_dbm: -35.0,
            })
            .collect(),
        path_loss_exponent: 3.0,
        reference_distance_m: 1.0,
        sigma_db: 0.0,
        scan_offset_sigma_db: 0.0,
        hearing_threshold_dbm: -113.0,
        max_audible: MAX_READINGS,
        shadowing: Vec::new(),
        seed: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut scans = Vec::with_capacity(400);
    for j in 0..20 {
        for i in 0..20 {
            let p = LocalPoint::new(5.0 + 10.0 * i as f64, 5.0 + 10.0 * j as f64);
            let geo = env.to_geo(p);
            let readings = (0..4)
                .map(|t| Reading {
                    tower_id: env.towers[t].id.clone(),
                    rss_dbm: rss_at(&env, p, t, &mut rng).expect("toy towers are always audible"),
                })
                .collect();
            scans.push(SyntheticScan {
                scan: RawScan {
                    timestamp_s: BASE_TIMESTAMP_S + (j * 20 + i) as f64,
                    location: geo,
                    confidence_radius_m: 0.0,
                    readings,
                },
                truth: geo,
                truth_local: p,
                gps_sigma_m: 0.0,
            });
        }
    }
    (env, scans)
}
