//! Flat-top hexagonal tessellations and per-hexagon aggregation of paired
//! plot values.
//!
//! Lattice cell `(col, row)` has its centroid at
//! `origin + (col * 1.5R, row * sqrt(3)R + (col odd ? sqrt(3)R/2 : 0))`
//! where `R = spacing / sqrt(3)` is the circumradius, so adjacent centroids
//! are exactly `spacing` apart and each hexagon covers
//! `sqrt(3)/2 * spacing^2`. The origin is the lower-left corner of the
//! region's bounding box.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Relative tolerance (of `spacing^2`) under which two squared centroid
/// distances count as a tie.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !(x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite())
            || x_max < x_min
            || y_max < y_min
        {
            return Err(Error::InvalidInput(format!("invalid bounding box {b:?}")));
        }
        Ok(b)
    }

    /// Smallest box containing all points.
    pub fn around(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("no points to bound".into()));
        }
        let mut b = BBox {
            x_min: f64::INFINITY,
            y_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for &(x, y) in points {
            b.x_min = b.x_min.min(x);
            b.y_min = b.y_min.min(y);
            b.x_max = b.x_max.max(x);
            b.y_max = b.y_max.max(y);
        }
        BBox::new(b.x_min, b.y_min, b.x_max, b.y_max)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// Lattice address of a hexagon. Ordered by `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HexId {
    pub row: i64,
    pub col: i64,
}

impl std::fmt::Display for HexId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "r{}c{}", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexCell {
    pub id: HexId,
    pub center: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct HexGrid {
    spacing: f64,
    origin: (f64, f64),
    bbox: BBox,
    cells: Vec<HexCell>,
    lookup: HashMap<HexId, usize>,
}

impl HexGrid {
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    /// Cells intersecting the bounding box, ordered by id.
    pub fn cells(&self) -> &[HexCell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Area of one hexagon, in squared map units.
    pub fn cell_area(&self) -> f64 {
        SQRT3 / 2.0 * self.spacing * self.spacing
    }

    fn circumradius(&self) -> f64 {
        self.spacing / SQRT3
    }

    pub fn centroid(&self, id: HexId) -> (f64, f64) {
        lattice_centroid(self.origin, self.circumradius(), id)
    }

    pub fn contains_cell(&self, id: HexId) -> bool {
        self.lookup.contains_key(&id)
    }

    /// Vertices of a hexagon, counter-clockwise from east.
    pub fn vertices(&self, id: HexId) -> [(f64, f64); 6] {
        hex_vertices(self.centroid(id), self.circumradius())
    }

    /// Nearest lattice centroid to `(x, y)` regardless of the bounding box.
    /// Ties go to the lower `(row, col)`.
    pub fn nearest_lattice_cell(&self, x: f64, y: f64) -> HexId {
        let r = self.circumradius();
        let dx = 1.5 * r;
        let dy = SQRT3 * r;
        let col0 = ((x - self.origin.0) / dx).round() as i64;
        let mut best: Option<(f64, HexId)> = None;
        let tie = TIE_EPS * self.spacing * self.spacing;
        for col in (col0 - 1)..=(col0 + 1) {
            let shift = if col.rem_euclid(2) == 1 { dy / 2.0 } else { 0.0 };
            let row0 = ((y - self.origin.1 - shift) / dy).round() as i64;
            for row in (row0 - 1)..=(row0 + 1) {
                let id = HexId { row, col };
                let (cx, cy) = self.centroid(id);
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                best = match best {
                    None => Some((d2, id)),
                    Some((bd, bid)) => {
                        if d2 < bd - tie || ((d2 - bd).abs() <= tie && id < bid) {
                            Some((d2, id))
                        } else {
                            Some((bd, bid))
                        }
                    }
                };
            }
        }
        best.expect("nine candidates").1
    }
}

fn lattice_centroid(origin: (f64, f64), r: f64, id: HexId) -> (f64, f64) {
    let dy = SQRT3 * r;
    let shift = if id.col.rem_euclid(2) == 1 { dy / 2.0 } else { 0.0 };
    (
        origin.0 + id.col as f64 * 1.5 * r,
        origin.1 + id.row as f64 * dy + shift,
    )
}

fn hex_vertices(c: (f64, f64), r: f64) -> [(f64, f64); 6] {
    let mut v = [(0.0, 0.0); 6];
    for (k, slot) in v.iter_mut().enumerate() {
        let a = (60.0 * k as f64).to_radians();
        *slot = (c.0 + r * a.cos(), c.1 + r * a.sin());
    }
    v
}

/// Separating-axis test between a flat-top hexagon and a box. Touching
/// counts as intersecting.
fn hex_intersects_bbox(c: (f64, f64), r: f64, b: &BBox) -> bool {
    let slack = 1e-9 * r;
    let verts = hex_vertices(c, r);
    let (mut hx0, mut hx1, mut hy0, mut hy1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in verts {
        hx0 = hx0.min(x);
        hx1 = hx1.max(x);
        hy0 = hy0.min(y);
        hy1 = hy1.max(y);
    }
    if hx1 < b.x_min - slack || hx0 > b.x_max + slack || hy1 < b.y_min - slack || hy0 > b.y_max + slack {
        return false;
    }
    // Hexagon edge normals at 30, 90, 150 degrees; 90 is already covered.
    for deg in [30.0f64, 150.0] {
        let (nx, ny) = (deg.to_radians().cos(), deg.to_radians().sin());
        let proj = |p: (f64, f64)| p.0 * nx + p.1 * ny;
        let (mut h0, mut h1) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in verts {
            h0 = h0.min(proj(v));
            h1 = h1.max(proj(v));
        }
        let corners = [
            (b.x_min, b.y_min),
            (b.x_min, b.y_max),
            (b.x_max, b.y_min),
            (b.x_max, b.y_max),
        ];
        let (mut b0, mut b1) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in corners {
            b0 = b0.min(proj(p));
            b1 = b1.max(proj(p));
        }
        if h1 < b0 - slack || h0 > b1 + slack {
            return false;
        }
    }
    true
}

/// Builds the tessellation of `bbox` at the given centroid spacing. Every
/// hexagon that touches the box is included.
pub fn make_hexgrid(bbox: BBox, spacing: f64) -> Result<HexGrid> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InvalidInput(format!(
            "hexagon spacing must be positive, got {spacing}"
        )));
    }
    let origin = (bbox.x_min, bbox.y_min);
    let r = spacing / SQRT3;
    let dx = 1.5 * r;
    let dy = SQRT3 * r;
    let col_hi = (bbox.width() / dx).ceil() as i64 + 1;
    let row_hi = (bbox.height() / dy).ceil() as i64 + 1;
    let mut cells = Vec::new();
    for row in -1..=row_hi {
        for col in -1..=col_hi {
            let id = HexId { row, col };
            let center = lattice_centroid(origin, r, id);
            if hex_intersects_bbox(center, r, &bbox) {
                cells.push(HexCell { id, center });
            }
        }
    }
    cells.sort_by_key(|c| c.id);
    let lookup = cells.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    Ok(HexGrid {
        spacing,
        origin,
        bbox,
        cells,
        lookup,
    })
}

/// Hexagon containing each point (nearest centroid, lower `(row, col)` on
/// ties). Points outside the bounding box are an error.
pub fn assign(points: &[(f64, f64)], hexgrid: &HexGrid) -> Result<Vec<HexId>> {
    let out = par::map_slice(points, |&(x, y)| {
        if !hexgrid.bbox.contains(x, y) {
            return Err(Error::OutsideTessellation { x, y });
        }
        let id = hexgrid.nearest_lattice_cell(x, y);
        if hexgrid.contains_cell(id) {
            Ok(id)
        } else {
            Err(Error::OutsideTessellation { x, y })
        }
    });
    out.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexAggregate {
    pub hex_id: HexId,
    pub n_members: usize,
    pub y_mean: f64,
    pub yhat_mean: f64,
}

/// Unweighted per-hexagon means of reference and predicted values. Only
/// hexagons with at least one member are emitted, ordered by id.
pub fn aggregate_pairs(
    locations: &[(f64, f64)],
    y: &[f64],
    yhat: &[f64],
    hexgrid: &HexGrid,
) -> Result<Vec<HexAggregate>> {
    if locations.len() != y.len() || y.len() != yhat.len() {
        return Err(Error::InvalidInput(
            "locations, y and yhat must have equal lengths".into(),
        ));
    }
    if locations.is_empty() {
        return Err(Error::InvalidInput("no pairs to aggregate".into()));
    }
    let ids = assign(locations, hexgrid)?;
    let mut acc: BTreeMap<HexId, (usize, f64, f64)> = BTreeMap::new();
    for ((id, a), b) in ids.iter().zip(y).zip(yhat) {
        let e = acc.entry(*id).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += a;
        e.2 += b;
    }
    Ok(acc
        .into_iter()
        .map(|(hex_id, (n, sy, sh))| HexAggregate {
            hex_id,
            n_members: n,
            y_mean: sy / n as f64,
            yhat_mean: sh / n as f64,
        })
        .collect())
}
