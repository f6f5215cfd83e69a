mod common;

use std::collections::BTreeSet;

use cellloc::geo::{project, unproject, CellId, GeoPoint, LocalPoint, VirtualGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::raster_oracle;

/// Minimum distance between the disk center and each cell square, brute force.
fn clamp_oracle(grid: &VirtualGrid, c: LocalPoint, r: f64) -> BTreeSet<usize> {
    let g = grid.cell_length_m;
    (0..grid.len())
        .filter(|&k| {
            let (col, row) = grid.col_row(CellId(k)).unwrap();
            let (x0, y0) = (col as f64 * g, row as f64 * g);
            let dx = (x0 - c.x_m).max(0.0).max(c.x_m - (x0 + g));
            let dy = (y0 - c.y_m).max(0.0).max(c.y_m - (y0 + g));
            dx * dx + dy * dy <= r * r
        })
        .collect()
}

fn grid(cols: usize, rows: usize, g: f64) -> VirtualGrid {
    VirtualGrid::from_parts(GeoPoint::new(31.1, 29.8).unwrap(), g, cols, rows).unwrap()
}

#[test]
fn circle_intersection_matches_raster_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = Vec::new();
    for case in 0..1000 {
        let g = [20.0, 37.5, 50.0][case % 3];
        let grid = grid(6, 5, g);
        let c = LocalPoint::new(rng.random_range(0.0..grid.width_m()), rng.random_range(0.0..grid.height_m()));
        let r = rng.random_range(0.0..=3.0 * g);
        let got: BTreeSet<usize> = grid.cells_intersecting_circle(c, r).into_iter().map(|c| c.0).collect();
        let exact = clamp_oracle(&grid, c, r);
        let raster = raster_oracle(&grid, c, r);
        if got != exact || got != raster {
            mismatches.push((c, r, got, exact, raster));
        }
        assert!(grid.cells_intersecting_circle(c, r).contains(&grid.cell_of(c).unwrap()));
    }
    assert!(mismatches.is_empty(), "{} mismatches, first: {:?}", mismatches.len(), mismatches.first());
}

#[test]
fn intersection_output_is_sorted_and_unique() {
    let grid = grid(10, 10, 10.0);
    let cells = grid.cells_intersecting_circle(LocalPoint::new(47.0, 52.0), 23.0);
    assert!(cells.windows(2).all(|w| w[0] < w[1]));
}

proptest! {
    #[test]
    fn cell_center_is_near_every_member(
        cols in 1usize..12, rows in 1usize..12, g in 5.0f64..500.0,
        fx in 0.0f64..1.0, fy in 0.0f64..1.0,
    ) {
        let grid = grid(cols, rows, g);
        let p = LocalPoint::new(fx * grid.width_m(), fy * grid.height_m());
        let cell = grid.cell_of(p).unwrap();
        prop_assert!(cell.0 < grid.len());
        let center = grid.cell_center(cell).unwrap();
        prop_assert!(center.distance(&p) <= g * std::f64::consts::SQRT_2 / 2.0 + 1e-9);
        // Unique: no other center is strictly closer in the max-norm sense.
        let (col, row) = grid.col_row(cell).unwrap();
        prop_assert_eq!(cell.0, row * cols + col);
    }

    #[test]
    fn project_round_trip(
        lat0 in -70.0f64..70.0, lon0 in -179.0f64..179.0,
        dx in -50_000.0f64..50_000.0, dy in -50_000.0f64..50_000.0,
    ) {
        let origin = GeoPoint::new(lat0, lon0).unwrap();
        let local = LocalPoint::new(dx, dy);
        let back = project(unproject(local, origin), origin).unwrap();
        prop_assert!(back.distance(&local) < 1e-6, "error {}", back.distance(&local));
    }

    #[test]
    fn out_of_extent_points_are_rejected(g in 10.0f64..200.0, over in 1e-6f64..1000.0) {
        let grid = grid(3, 4, g);
        prop_assert!(grid.cell_of(LocalPoint::new(-over, 0.0)).is_err());
        prop_assert!(grid.cell_of(LocalPoint::new(0.0, grid.height_m() + over)).is_err());
    }
}
