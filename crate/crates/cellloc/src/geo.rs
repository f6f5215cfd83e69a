//! Local planar projection and the virtual grid superimposed on the area of
//! interest.
//!
//! Geographic fixes are projected with an equirectangular approximation
//! anchored at the grid origin (the southwest corner of the padded data
//! bounding box). Cells are square, indexed row-major from the southwest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Meters per degree of longitude at the equator.
pub const METERS_PER_DEG_LON: f64 = 111_320.0;
/// Meters per degree of latitude.
pub const METERS_PER_DEG_LAT: f64 = 110_574.0;
/// Latitude span beyond which the local approximation is refused.
pub const MAX_LAT_SPAN_DEG: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid coordinate lat={lat} lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("latitude span {0:.4} deg exceeds the local projection limit")]
    SpanTooLarge(f64),
    #[error("cell length must be positive and finite, got {0}")]
    InvalidCellLength(f64),
    #[error("padding must be non-negative and finite, got {0}")]
    InvalidPadding(f64),
    #[error("degenerate bounding box")]
    DegenerateBox,
    #[error("point ({x:.3}, {y:.3}) m lies outside the grid extent")]
    OutOfBounds { x: f64, y: f64 },
    #[error("cell index {index} out of range for K = {k}")]
    InvalidCell { index: usize, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GeoPoint {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, GridError> {
        let p = GeoPoint { lat_deg, lon_deg };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(GridError::InvalidCoordinate { lat: lat_deg, lon: lon_deg })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat_deg.is_finite()
            && self.lon_deg.is_finite()
            && (-90.0..=90.0).contains(&self.lat_deg)
            && (-180.0..=180.0).contains(&self.lon_deg)
    }
}

/// Meters east (`x_m`) and north (`y_m`) of a reference origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalPoint {
    pub x_m: f64,
    pub y_m: f64,
}

impl LocalPoint {
    pub fn new(x_m: f64, y_m: f64) -> Self {
        LocalPoint { x_m, y_m }
    }

    pub fn distance(&self, other: &LocalPoint) -> f64 {
        (self.x_m - other.x_m).hypot(self.y_m - other.y_m)
    }
}

/// Equirectangular projection of `p` into the frame anchored at `origin`.
pub fn project(p: GeoPoint, origin: GeoPoint) -> Result<LocalPoint, GridError> {
    for q in [p, origin] {
        if !q.is_valid() {
            return Err(GridError::InvalidCoordinate { lat: q.lat_deg, lon: q.lon_deg });
        }
    }
    let dlat = p.lat_deg - origin.lat_deg;
    if dlat.abs() >= MAX_LAT_SPAN_DEG {
        return Err(GridError::SpanTooLarge(dlat.abs()));
    }
    let dlon = p.lon_deg - origin.lon_deg;
    Ok(LocalPoint {
        x_m: dlon * origin.lat_deg.to_radians().cos() * METERS_PER_DEG_LON,
        y_m: dlat * METERS_PER_DEG_LAT,
    })
}

/// Inverse of [`project`].
pub fn unproject(p: LocalPoint, origin: GeoPoint) -> GeoPoint {
    GeoPoint {
        lat_deg: origin.lat_deg + p.y_m / METERS_PER_DEG_LAT,
        lon_deg: origin.lon_deg + p.x_m / (origin.lat_deg.to_radians().cos() * METERS_PER_DEG_LON),
    }
}

/// Row-major cell index: `row * n_cols + col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(pub usize);

impl CellId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for CellId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualGrid {
    /// Southwest corner of the padded box; local frame origin.
    pub origin: GeoPoint,
    pub cell_length_m: f64,
    pub n_cols: usize,
    pub n_rows: usize,
}

impl VirtualGrid {
    /// Builds a grid whose origin is the southwest corner of `bbox` pushed
    /// out by `padding_m`, tiling the padded box with square cells.
    pub fn build(
        bbox: (GeoPoint, GeoPoint),
        cell_length_m: f64,
        padding_m: f64,
    ) -> Result<Self, GridError> {
        if !(cell_length_m.is_finite() && cell_length_m > 0.0) {
            return Err(GridError::InvalidCellLength(cell_length_m));
        }
        if !(padding_m.is_finite() && padding_m >= 0.0) {
            return Err(GridError::InvalidPadding(padding_m));
        }
        let (a, b) = bbox;
        let sw = GeoPoint::new(a.lat_deg.min(b.lat_deg), a.lon_deg.min(b.lon_deg))?;
        let ne = GeoPoint::new(a.lat_deg.max(b.lat_deg), a.lon_deg.max(b.lon_deg))?;
        let extent = project(ne, sw)?;
        if !(extent.x_m.is_finite() && extent.y_m.is_finite()) {
            return Err(GridError::DegenerateBox);
        }
        let origin = unproject(LocalPoint::new(-padding_m, -padding_m), sw);
        let width = extent.x_m + 2.0 * padding_m;
        let height = extent.y_m + 2.0 * padding_m;
        Ok(VirtualGrid {
            origin,
            cell_length_m,
            n_cols: cells_along(width, cell_length_m),
            n_rows: cells_along(height, cell_length_m),
        })
    }

    /// Grid with an explicit origin and shape, used when reloading models.
    pub fn from_parts(
        origin: GeoPoint,
        cell_length_m: f64,
        n_cols: usize,
        n_rows: usize,
    ) -> Result<Self, GridError> {
        if !origin.is_valid() {
            return Err(GridError::InvalidCoordinate { lat: origin.lat_deg, lon: origin.lon_deg });
        }
        if !(cell_length_m.is_finite() && cell_length_m > 0.0) {
            return Err(GridError::InvalidCellLength(cell_length_m));
        }
        if n_cols == 0 || n_rows == 0 {
            return Err(GridError::DegenerateBox);
        }
        Ok(VirtualGrid { origin, cell_length_m, n_cols, n_rows })
    }

    /// Smallest grid covering every point in `points`.
    pub fn covering(
        points: impl IntoIterator<Item = GeoPoint>,
        cell_length_m: f64,
        padding_m: f64,
    ) -> Result<Self, GridError> {
        let mut iter = points.into_iter();
        let first = iter.next().ok_or(GridError::DegenerateBox)?;
        let (mut sw, mut ne) = (first, first);
        for p in iter {
            sw.lat_deg = sw.lat_deg.min(p.lat_deg);
            sw.lon_deg = sw.lon_deg.min(p.lon_deg);
            ne.lat_deg = ne.lat_deg.max(p.lat_deg);
            ne.lon_deg = ne.lon_deg.max(p.lon_deg);
        }
        Self::build((sw, ne), cell_length_m, padding_m)
    }

    /// K, the number of cells.
    pub fn len(&self) -> usize {
        self.n_cols * self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width_m(&self) -> f64 {
        self.n_cols as f64 * self.cell_length_m
    }

    pub fn height_m(&self) -> f64 {
        self.n_rows as f64 * self.cell_length_m
    }

    pub fn to_local(&self, p: GeoPoint) -> Result<LocalPoint, GridError> {
        project(p, self.origin)
    }

    pub fn to_geo(&self, p: LocalPoint) -> GeoPoint {
        unproject(p, self.origin)
    }

    pub fn contains(&self, p: LocalPoint) -> bool {
        p.x_m >= 0.0 && p.y_m >= 0.0 && p.x_m <= self.width_m() && p.y_m <= self.height_m()
    }

    /// Cell holding `p`. Points on a shared edge go to the higher-index cell;
    /// points on the outer east/north edge go to the last column/row.
    pub fn cell_of(&self, p: LocalPoint) -> Result<CellId, GridError> {
        if !self.contains(p) {
            return Err(GridError::OutOfBounds { x: p.x_m, y: p.y_m });
        }
        let col = axis_index(p.x_m, self.cell_length_m, self.n_cols);
        let row = axis_index(p.y_m, self.cell_length_m, self.n_rows);
        Ok(CellId(row * self.n_cols + col))
    }

    pub fn cell_center(&self, c: CellId) -> Result<LocalPoint, GridError> {
        let (col, row) = self.col_row(c)?;
        Ok(LocalPoint {
            x_m: (col as f64 + 0.5) * self.cell_length_m,
            y_m: (row as f64 + 0.5) * self.cell_length_m,
        })
    }

    /// All cell centers in index order.
    pub fn centers(&self) -> Vec<LocalPoint> {
        (0..self.len())
            .map(|i| {
                let (col, row) = (i % self.n_cols, i / self.n_cols);
                LocalPoint {
                    x_m: (col as f64 + 0.5) * self.cell_length_m,
                    y_m: (row as f64 + 0.5) * self.cell_length_m,
                }
            })
            .collect()
    }

    pub fn col_row(&self, c: CellId) -> Result<(usize, usize), GridError> {
        if c.0 >= self.len() {
            return Err(GridError::InvalidCell { index: c.0, k: self.len() });
        }
        Ok((c.0 % self.n_cols, c.0 / self.n_cols))
    }

    /// Cells whose closed square meets the closed disk, in ascending index
    /// order. Only squares overlapping the disk's bounding box are tested.
    pub fn cells_intersecting_circle(&self, center: LocalPoint, radius_m: f64) -> Vec<CellId> {
        let r = radius_m.max(0.0);
        let g = self.cell_length_m;
        let col_range = candidate_range(center.x_m - r, center.x_m + r, g, self.n_cols);
        let row_range = candidate_range(center.y_m - r, center.y_m + r, g, self.n_rows);
        let (Some((c0, c1)), Some((r0, r1))) = (col_range, row_range) else {
            return Vec::new();
        };
        let r2 = r * r;
        let mut out = Vec::new();
        for row in r0..=r1 {
            let (ymin, ymax) = (row as f64 * g, (row + 1) as f64 * g);
            let dy = center.y_m - center.y_m.clamp(ymin, ymax);
            for col in c0..=c1 {
                let (xmin, xmax) = (col as f64 * g, (col + 1) as f64 * g);
                let dx = center.x_m - center.x_m.clamp(xmin, xmax);
                if dx * dx + dy * dy <= r2 {
                    out.push(CellId(row * self.n_cols + col));
                }
            }
        }
        out
    }
}

fn cells_along(length_m: f64, cell_length_m: f64) -> usize {
    // Projection round-trips leave micrometre noise on exact multiples.
    let n = (length_m / cell_length_m - 1e-6).ceil();
    if n.is_finite() && n >= 1.0 {
        n as usize
    } else {
        1
    }
}

fn axis_index(v: f64, g: f64, n: usize) -> usize {
    ((v / g).floor() as usize).min(n - 1)
}

/// Inclusive index range of cells along one axis overlapping `[lo, hi]`.
fn candidate_range(lo: f64, hi: f64, g: f64, n: usize) -> Option<(usize, usize)> {
    let extent = n as f64 * g;
    if hi < 0.0 || lo > extent {
        return None;
    }
    // Closed squares: a disk touching x = k*g touches cells k-1 and k.
    let first = ((lo.max(0.0) / g).ceil() as usize).saturating_sub(1);
    let last = ((hi.min(extent) / g).floor() as usize).min(n - 1);
    Some((first.min(last), last))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_2x2() -> VirtualGrid {
        VirtualGrid::from_parts(GeoPoint::new(30.0, 31.0).unwrap(), 100.0, 2, 2).unwrap()
    }

    #[test]
    fn project_identity_and_east_offset() {
        let o = GeoPoint::new(30.0, 31.0).unwrap();
        assert_eq!(project(o, o).unwrap(), LocalPoint::new(0.0, 0.0));
        let p = project(GeoPoint::new(30.0, 31.001).unwrap(), o).unwrap();
        let expected = 0.001 * 30f64.to_radians().cos() * 111_320.0;
        assert!((p.x_m - expected).abs() < 1e-9);
        assert!((p.x_m - 96.4).abs() < 0.05);
        assert_eq!(p.y_m, 0.0);
    }

    #[test]
    fn project_rejects_wide_span() {
        let o = GeoPoint::new(30.0, 31.0).unwrap();
        let p = GeoPoint::new(31.0, 31.0).unwrap();
        assert!(matches!(project(p, o), Err(GridError::SpanTooLarge(_))));
        assert!(GeoPoint::new(91.0, 0.0).is_err());
    }

    #[test]
    fn build_grid_ceiling_division() {
        let sw = GeoPoint::new(30.0, 31.0).unwrap();
        let corner = |w: f64, h: f64| unproject(LocalPoint::new(w, h), sw);
        let g = VirtualGrid::build((sw, corner(200.0, 200.0)), 100.0, 0.0).unwrap();
        assert_eq!((g.n_cols, g.n_rows, g.len()), (2, 2, 4));
        let g = VirtualGrid::build((sw, corner(150.0, 90.0)), 100.0, 0.0).unwrap();
        assert_eq!((g.n_cols, g.n_rows, g.len()), (2, 1, 2));
        let g = VirtualGrid::build((sw, corner(1.0, 1.0)), 500.0, 0.0).unwrap();
        assert_eq!(g.len(), 1);
        assert!(VirtualGrid::build((sw, corner(1.0, 1.0)), 0.0, 0.0).is_err());
        assert!(VirtualGrid::build((sw, corner(1.0, 1.0)), -5.0, 0.0).is_err());
    }

    #[test]
    fn padding_shifts_origin_southwest() {
        let sw = GeoPoint::new(30.0, 31.0).unwrap();
        let ne = unproject(LocalPoint::new(200.0, 200.0), sw);
        let g = VirtualGrid::build((sw, ne), 100.0, 50.0).unwrap();
        assert_eq!((g.n_cols, g.n_rows), (3, 3));
        let p = g.to_local(sw).unwrap();
        assert!((p.x_m - 50.0).abs() < 1e-2 && (p.y_m - 50.0).abs() < 1e-2);
    }

    #[test]
    fn cell_of_boundary_convention() {
        let g = grid_2x2();
        assert_eq!(g.cell_of(LocalPoint::new(0.0, 0.0)).unwrap(), CellId(0));
        assert_eq!(g.cell_of(LocalPoint::new(150.0, 50.0)).unwrap(), CellId(1));
        assert_eq!(g.cell_of(LocalPoint::new(100.0, 100.0)).unwrap(), CellId(3));
        assert_eq!(g.cell_of(LocalPoint::new(200.0, 200.0)).unwrap(), CellId(3));
        assert!(matches!(
            g.cell_of(LocalPoint::new(-0.1, 10.0)),
            Err(GridError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn cell_centers() {
        let g = grid_2x2();
        assert_eq!(g.cell_center(CellId(0)).unwrap(), LocalPoint::new(50.0, 50.0));
        assert_eq!(g.cell_center(CellId(3)).unwrap(), LocalPoint::new(150.0, 150.0));
        assert!(g.cell_center(CellId(4)).is_err());
        let single = VirtualGrid::from_parts(GeoPoint::new(0.0, 0.0).unwrap(), 500.0, 1, 1).unwrap();
        assert_eq!(single.cell_center(CellId(0)).unwrap(), LocalPoint::new(250.0, 250.0));
    }

    #[test]
    fn circle_cases() {
        let g = grid_2x2();
        assert_eq!(g.cells_intersecting_circle(LocalPoint::new(20.0, 120.0), 0.0), vec![CellId(2)]);
        assert_eq!(
            g.cells_intersecting_circle(LocalPoint::new(100.0, 100.0), 1.0),
            vec![CellId(0), CellId(1), CellId(2), CellId(3)]
        );
        // Corner (100,100) is 70.7 m from (50,50): cell 3 is out of reach at r = 60.
        assert_eq!(
            g.cells_intersecting_circle(LocalPoint::new(50.0, 50.0), 60.0),
            vec![CellId(0), CellId(1), CellId(2)]
        );
        assert!(g.cells_intersecting_circle(LocalPoint::new(-500.0, 50.0), 10.0).is_empty());
        // Tangent to the outer edge from outside still touches.
        assert_eq!(g.cells_intersecting_circle(LocalPoint::new(-10.0, 50.0), 10.0), vec![CellId(0)]);
    }
}
