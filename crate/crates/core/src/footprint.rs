//! FIA plot footprint geometry and area-weighted raster extraction.
//!
//! A plot is the union of four 7.32 m circles: one at the plot centre and
//! three 36.6 m away, spaced 120 degrees apart in azimuth with the last due
//! north (azimuths run clockwise from north). Pixel weights are the area of that union falling inside each
//! pixel, in square metres.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, GridGeometry};
use crate::inventory::SUBPLOT_RADIUS_M;
use crate::par;

pub const SUBPLOT_OFFSET_M: f64 = 36.6;
pub const SUBPLOT_AZIMUTHS_DEG: [f64; 3] = [120.0, 240.0, 360.0];

/// Boundary pixels are subdivided until the leaf side drops below
/// `radius / LEAF_DIVISOR`; leaves are then resolved by a straight-edge
/// approximation of the arc.
const LEAF_DIVISOR: f64 = 128.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotFootprint {
    pub center: Point,
    pub subplot_radius: f64,
    pub offset: f64,
    pub azimuths_deg: [f64; 3],
}

impl PlotFootprint {
    /// Standard FIA layout around `center`.
    pub fn new(center: Point) -> Self {
        PlotFootprint {
            center,
            subplot_radius: SUBPLOT_RADIUS_M,
            offset: SUBPLOT_OFFSET_M,
            azimuths_deg: SUBPLOT_AZIMUTHS_DEG,
        }
    }

    pub fn subplot_centers(&self) -> [Point; 4] {
        let c = self.center;
        let mut out = [c; 4];
        for (slot, az) in out[1..].iter_mut().zip(self.azimuths_deg) {
            let a = az.to_radians();
            *slot = Point::new(c.x + self.offset * a.sin(), c.y + self.offset * a.cos());
        }
        out
    }

    /// Area of the four (disjoint) circles in square metres.
    pub fn area(&self) -> f64 {
        4.0 * std::f64::consts::PI * self.subplot_radius * self.subplot_radius
    }
}

/// Subplot centres of a standard plot at `center`.
pub fn subplot_centers(center: Point) -> [Point; 4] {
    PlotFootprint::new(center).subplot_centers()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellWeight {
    pub col: usize,
    pub row: usize,
    /// Overlap area in m^2.
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlapWeights {
    pub entries: Vec<CellWeight>,
}

impl OverlapWeights {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Overlap area between the footprint and every grid cell it touches.
/// Cells outside the grid are ignored, so a footprint entirely off the grid
/// yields no entries. Entries are ordered by `(row, col)`.
pub fn pixel_overlap_weights(fp: &PlotFootprint, geom: &GridGeometry) -> OverlapWeights {
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let r = fp.subplot_radius;
    let leaf = r / LEAF_DIVISOR;
    for c in fp.subplot_centers() {
        let Some((col_lo, col_hi, row_lo, row_hi)) = cell_range(geom, c, r) else {
            continue;
        };
        for row in row_lo..=row_hi {
            for col in col_lo..=col_hi {
                let (x0, y0, x1, y1) = geom.cell_bounds(col, row);
                let w = circle_square_area(c, r, x0, y0, x1 - x0, leaf);
                // y1 - y0 equals x1 - x0 for square cells
                debug_assert!(((y1 - y0) - (x1 - x0)).abs() < 1e-9 * geom.cellsize);
                if w > 0.0 {
                    *acc.entry((row, col)).or_insert(0.0) += w;
                }
            }
        }
    }
    OverlapWeights {
        entries: acc
            .into_iter()
            .map(|((row, col), weight)| CellWeight { col, row, weight })
            .collect(),
    }
}

fn cell_range(geom: &GridGeometry, c: Point, r: f64) -> Option<(usize, usize, usize, usize)> {
    let cs = geom.cellsize;
    let col_lo = ((c.x - r - geom.x_origin) / cs).floor();
    let col_hi = ((c.x + r - geom.x_origin) / cs).floor();
    let row_lo = ((geom.y_max() - (c.y + r)) / cs).floor();
    let row_hi = ((geom.y_max() - (c.y - r)) / cs).floor();
    let ncols = geom.ncols as f64;
    let nrows = geom.nrows as f64;
    if col_hi < 0.0 || row_hi < 0.0 || col_lo >= ncols || row_lo >= nrows {
        return None;
    }
    Some((
        col_lo.max(0.0) as usize,
        col_hi.min(ncols - 1.0) as usize,
        row_lo.max(0.0) as usize,
        row_hi.min(nrows - 1.0) as usize,
    ))
}

/// Area of a circle intersected with the axis-aligned square
/// `[x0, x0+side] x [y0, y0+side]`, by adaptive quadtree subdivision.
fn circle_square_area(c: Point, r: f64, x0: f64, y0: f64, side: f64, leaf: f64) -> f64 {
    let x1 = x0 + side;
    let y1 = y0 + side;
    let nx = c.x.clamp(x0, x1);
    let ny = c.y.clamp(y0, y1);
    let r2 = r * r;
    if (nx - c.x).powi(2) + (ny - c.y).powi(2) >= r2 {
        return 0.0;
    }
    let fx = (c.x - x0).abs().max((c.x - x1).abs());
    let fy = (c.y - y0).abs().max((c.y - y1).abs());
    if fx * fx + fy * fy <= r2 {
        return side * side;
    }
    if side <= leaf {
        return leaf_coverage(c, r, x0, y0, side);
    }
    let h = side / 2.0;
    circle_square_area(c, r, x0, y0, h, leaf)
        + circle_square_area(c, r, x0 + h, y0, h, leaf)
        + circle_square_area(c, r, x0, y0 + h, h, leaf)
        + circle_square_area(c, r, x0 + h, y0 + h, h, leaf)
}

/// Covered area of a small square, treating the circle boundary as the
/// tangent-parallel line through the point closest to the square centre.
fn leaf_coverage(c: Point, r: f64, x0: f64, y0: f64, side: f64) -> f64 {
    let mx = x0 + side / 2.0 - c.x;
    let my = y0 + side / 2.0 - c.y;
    let d = mx.hypot(my);
    if d == 0.0 {
        return side * side;
    }
    // Signed distance from the square centre to the boundary, positive inside.
    let s = r - d;
    let a = side * (mx / d).abs();
    let b = side * (my / d).abs();
    let (a, b) = if a >= b { (a, b) } else { (b, a) };
    // t: distance from the outermost corner's projection to the boundary.
    let t = s + (a + b) / 2.0;
    let frac = if t <= 0.0 {
        0.0
    } else if t >= a + b {
        1.0
    } else if b <= 1e-12 * a {
        t / a
    } else if t <= b {
        t * t / (2.0 * a * b)
    } else if t <= a {
        (t - b / 2.0) / a
    } else {
        1.0 - (a + b - t).powi(2) / (2.0 * a * b)
    };
    frac * side * side
}

/// Overlap-weighted mean of the valid cells under the footprint. `None` when
/// every touched cell is masked or the footprint misses the grid.
pub fn extract_weighted_mean(grid: &Grid, fp: &PlotFootprint) -> Option<f64> {
    let weights = pixel_overlap_weights(fp, grid.geometry());
    weighted_mean(grid, &weights)
}

/// Weighted mean using precomputed weights (the geometry must match `grid`).
pub fn weighted_mean(grid: &Grid, weights: &OverlapWeights) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for e in &weights.entries {
        if let Some(v) = grid.get(e.col, e.row) {
            num += e.weight * v as f64;
            den += e.weight;
        }
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

/// Extracts many footprints from one grid.
pub fn extract_many(grid: &Grid, footprints: &[PlotFootprint]) -> Vec<Option<f64>> {
    par::map_slice(footprints, |fp| extract_weighted_mean(grid, fp))
}
