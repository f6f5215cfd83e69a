#![allow(dead_code)]

use std::collections::BTreeSet;

use cellloc::geo::{LocalPoint, VirtualGrid};

/// Cells containing at least one point of a 0.5 m raster of the closed disk.
/// Raster points on the disk boundary are included, plus the exact extreme
/// points, so tangent contacts are not lost to the lattice.
pub fn raster_oracle(grid: &VirtualGrid, c: LocalPoint, r: f64) -> BTreeSet<usize> {
    let step = 0.5;
    let mut cells = BTreeSet::new();
    let mut mark = |x: f64, y: f64| {
        let p = LocalPoint::new(x, y);
        if grid.contains(p) {
            cells.insert(grid.cell_of(p).unwrap().0);
        }
    };
    let n = (r / step).ceil() as i64;
    for i in -n..=n {
        for j in -n..=n {
            let (dx, dy) = (i as f64 * step, j as f64 * step);
            if dx * dx + dy * dy <= r * r {
                mark(c.x_m + dx, c.y_m + dy);
            }
        }
    }
    // Points of the disk nearest each cell edge line it can reach.
    let g = grid.cell_length_m;
    let lines_x = (0..=grid.n_cols).map(|i| i as f64 * g);
    let lines_y = (0..=grid.n_rows).map(|j| j as f64 * g);
    for x in lines_x {
        if (x - c.x_m).abs() <= r {
            let h = (r * r - (x - c.x_m).powi(2)).sqrt();
            for y in [c.y_m - h, c.y_m + h, c.y_m] {
                mark(x - 1e-9, y);
                mark(x + 1e-9, y);
            }
        }
    }
    for y in lines_y {
        if (y - c.y_m).abs() <= r {
            let h = (r * r - (y - c.y_m).powi(2)).sqrt();
            for x in [c.x_m - h, c.x_m + h, c.x_m] {
                mark(x, y - 1e-9);
                mark(x, y + 1e-9);
            }
        }
    }
    cells
}

/// Every dropped-tower pattern by bitmask: subsets of the heard towers of
/// size 1..=2, applied only when at least 6 towers are heard.
pub fn brute_force_variants(v: &[f64]) -> BTreeSet<Vec<u64>> {
    let heard: Vec<usize> = (0..v.len()).filter(|&j| v[j] != 0.0).collect();
    let mut out = BTreeSet::new();
    if heard.len() < 6 {
        return out;
    }
    for mask in 1u32..(1 << heard.len()) {
        if mask.count_ones() > 2 {
            continue;
        }
        let mut w = v.to_vec();
        for (bit, &j) in heard.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                w[j] = 0.0;
            }
        }
        out.insert(w.iter().map(|x| x.to_bits()).collect());
    }
    out
}

pub fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}
