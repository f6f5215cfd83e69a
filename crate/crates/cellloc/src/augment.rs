//! Spatial and scan data augmentation, and assembly of the labeled training
//! set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geo::{CellId, VirtualGrid};
use crate::ingest::{vectorize, FeatureVector, RawScan, RssRange, TowerIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: FeatureVector,
    pub label: CellId,
}

/// The four augmentation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    None,
    Spatial,
    Scan,
    #[default]
    Both,
}

impl Augmentation {
    pub const ALL: [Augmentation; 4] =
        [Augmentation::None, Augmentation::Spatial, Augmentation::Scan, Augmentation::Both];

    pub fn spatial(self) -> bool {
        matches!(self, Augmentation::Spatial | Augmentation::Both)
    }

    pub fn scan(self) -> bool {
        matches!(self, Augmentation::Scan | Augmentation::Both)
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Augmentation::None => "none",
            Augmentation::Spatial => "spatial",
            Augmentation::Scan => "scan",
            Augmentation::Both => "both",
        })
    }
}

impl FromStr for Augmentation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Augmentation::None),
            "spatial" => Ok(Augmentation::Spatial),
            "scan" | "scans" => Ok(Augmentation::Scan),
            "both" => Ok(Augmentation::Both),
            other => Err(format!("unknown augmentation '{other}' (none|spatial|scan|both)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub spatial_enabled: bool,
    pub scan_enabled: bool,
    pub max_dropped_towers: usize,
    /// Scans hearing fewer towers than this are not scan-augmented.
    pub min_heard_for_scan_aug: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig::from(Augmentation::Both)
    }
}

impl From<Augmentation> for AugmentConfig {
    fn from(a: Augmentation) -> Self {
        AugmentConfig {
            spatial_enabled: a.spatial(),
            scan_enabled: a.scan(),
            max_dropped_towers: 2,
            min_heard_for_scan_aug: 6,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_dropped_towers < 1 {
            return Err("max_dropped_towers must be at least 1".into());
        }
        if self.min_heard_for_scan_aug <= self.max_dropped_towers {
            return Err("min_heard_for_scan_aug must exceed max_dropped_towers".into());
        }
        Ok(())
    }
}

/// Cells a scan is labeled with. `None` when the fix falls outside the grid.
pub fn spatial_augment(scan: &RawScan, grid: &VirtualGrid, enabled: bool) -> Option<Vec<CellId>> {
    let center = grid.to_local(scan.location).ok()?;
    let own = grid.cell_of(center).ok()?;
    if !enabled || scan.confidence_radius_m <= 0.0 {
        return Some(vec![own]);
    }
    let cells = grid.cells_intersecting_circle(center, scan.confidence_radius_m);
    debug_assert!(cells.contains(&own));
    Some(cells)
}

/// Copies of `features` with every non-empty subset of up to
/// `max_dropped_towers` heard towers zeroed. The original is not included.
pub fn scan_augment(features: &FeatureVector, cfg: &AugmentConfig) -> Vec<FeatureVector> {
    let heard: Vec<usize> =
        features.0.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, _)| j).collect();
    if heard.len() < cfg.min_heard_for_scan_aug {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut subset = Vec::with_capacity(cfg.max_dropped_towers);
    for size in 1..=cfg.max_dropped_towers.min(heard.len()) {
        push_combinations(&heard, size, 0, &mut subset, &mut |drop| {
            let mut v = features.clone();
            for &j in drop {
                v.0[j] = 0.0;
            }
            out.push(v);
        });
    }
    out
}

fn push_combinations(
    items: &[usize],
    size: usize,
    start: usize,
    current: &mut Vec<usize>,
    emit: &mut impl FnMut(&[usize]),
) {
    if current.len() == size {
        emit(current);
        return;
    }
    for i in start..items.len() {
        current.push(items[i]);
        push_combinations(items, size, i + 1, current, emit);
        current.pop();
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub samples: Vec<LabeledSample>,
    /// Scans dropped because their fix projects outside the grid.
    pub dropped_out_of_extent: usize,
    /// Readings ignored because the tower is not in the index.
    pub unknown_readings: usize,
}

/// Expands every scan into `labels x variants` samples, in input order.
pub fn build_training_set(
    scans: &[RawScan],
    grid: &VirtualGrid,
    index: &TowerIndex,
    range: RssRange,
    cfg: &AugmentConfig,
) -> TrainingSet {
    let mut set = TrainingSet::default();
    for scan in scans {
        let Some(labels) = spatial_augment(scan, grid, cfg.spatial_enabled) else {
            set.dropped_out_of_extent += 1;
            continue;
        };
        let v = vectorize(scan, index, range);
        set.unknown_readings += v.unknown_towers;
        let mut variants = vec![v.features];
        if cfg.scan_enabled {
            let extra = scan_augment(&variants[0], cfg);
            variants.extend(extra);
        }
        for &label in &labels {
            for features in &variants {
                set.samples.push(LabeledSample { features: features.clone(), label });
            }
        }
    }
    set
}
