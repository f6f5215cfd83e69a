//! Online phase: posterior over cells, the most likely cell, and the
//! probability-weighted location.

use thiserror::Error;

use crate::geo::{CellId, GeoPoint, LocalPoint, VirtualGrid};
use crate::ingest::{vectorize, RawScan};
use crate::model::{FingerprintModel, ModelError, Posterior};

#[derive(Debug, Error)]
pub enum InferError {
    #[error("scan contains no tower known to the model")]
    NoKnownTowers,
    #[error("posterior has {got} entries, grid has {expected} cells")]
    PosteriorSize { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationEstimate {
    /// Most probable cell.
    pub cell: CellId,
    /// Probability-weighted center of mass, in the grid's local frame.
    pub local: LocalPoint,
    pub point: GeoPoint,
    pub posterior: Posterior,
    pub heard_known_towers: usize,
}

/// How many cells take part in the weighted average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fusion {
    #[default]
    AllCells,
    /// Only the `n` most probable cells, renormalized.
    TopN(usize),
}

pub fn posterior_of_scan(model: &FingerprintModel, scan: &RawScan) -> Result<Posterior, InferError> {
    let v = vectorize(scan, &model.towers, model.rss_range);
    if v.features.heard() == 0 {
        return Err(InferError::NoKnownTowers);
    }
    Ok(model.network.posterior(v.features.as_slice())?)
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax_cell(p: &Posterior) -> CellId {
    let mut best = 0;
    for (i, &v) in p.0.iter().enumerate() {
        if v > p.0[best] {
            best = i;
        }
    }
    CellId(best)
}

pub fn fused_location(grid: &VirtualGrid, p: &Posterior) -> Result<LocalPoint, InferError> {
    fused_location_with(grid, p, Fusion::AllCells)
}

pub fn fused_location_with(
    grid: &VirtualGrid,
    p: &Posterior,
    fusion: Fusion,
) -> Result<LocalPoint, InferError> {
    if p.len() != grid.len() {
        return Err(InferError::PosteriorSize { expected: grid.len(), got: p.len() });
    }
    let centers = grid.centers();
    let weighted = |idx: &mut dyn Iterator<Item = usize>| {
        let (mut x, mut y, mut total) = (0.0, 0.0, 0.0);
        for i in idx {
            x += centers[i].x_m * p.0[i];
            y += centers[i].y_m * p.0[i];
            total += p.0[i];
        }
        LocalPoint::new(x / total, y / total)
    };
    Ok(match fusion {
        Fusion::AllCells => weighted(&mut (0..p.len())),
        Fusion::TopN(n) => {
            let mut order: Vec<usize> = (0..p.len()).collect();
            order.sort_by(|&a, &b| p.0[b].total_cmp(&p.0[a]).then(a.cmp(&b)));
            order.truncate(n.max(1));
            weighted(&mut order.into_iter())
        }
    })
}

/// Builds the estimate from a posterior; shared by every estimator.
pub fn estimate_from_posterior(
    grid: &VirtualGrid,
    posterior: Posterior,
    heard_known_towers: usize,
    fusion: Fusion,
) -> Result<LocationEstimate, InferError> {
    let cell = argmax_cell(&posterior);
    let local = fused_location_with(grid, &posterior, fusion)?;
    Ok(LocationEstimate {
        cell,
        local,
        point: grid.to_geo(local),
        posterior,
        heard_known_towers,
    })
}

/// Locates a scan from its RSS readings alone; the scan's GPS fields are
/// never read.
pub fn localize(model: &FingerprintModel, scan: &RawScan) -> Result<LocationEstimate, InferError> {
    localize_with(model, scan, Fusion::AllCells)
}

pub fn localize_with(
    model: &FingerprintModel,
    scan: &RawScan,
    fusion: Fusion,
) -> Result<LocationEstimate, InferError> {
    let v = vectorize(scan, &model.towers, model.rss_range);
    let heard = v.features.heard();
    if heard == 0 {
        return Err(InferError::NoKnownTowers);
    }
    let posterior = model.network.posterior(v.features.as_slice())?;
    estimate_from_posterior(&model.grid, posterior, heard, fusion)
}
