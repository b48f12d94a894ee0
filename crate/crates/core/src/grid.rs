//! Single-band georeferenced rasters with an explicit validity mask.
//!
//! Cells are stored row-major, north row first, west to east. `y_origin` is
//! the southern edge of the grid, so row 0 spans
//! `[y_origin + (nrows-1)*cellsize, y_origin + nrows*cellsize]`.
//!
//! Two on-disk layouts are supported:
//!
//! - binary: one JSON header line, `nrows*ncols` little-endian `f32` values,
//!   then `nrows*ncols` mask bytes (1 = valid). Round trips bit-exactly.
//! - ascii: ESRI ASCII grid with a `NODATA_value` sentinel.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridFormat {
    Binary,
    Ascii,
}

impl GridFormat {
    /// Guesses the format from a file extension (`.asc` is ASCII, anything
    /// else binary).
    pub fn from_path(path: &Path) -> GridFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("asc") => GridFormat::Ascii,
            _ => GridFormat::Binary,
        }
    }
}

/// Placement and shape of a grid. Two grids are aligned iff their
/// geometries compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub ncols: usize,
    pub nrows: usize,
    pub x_origin: f64,
    pub y_origin: f64,
    pub cellsize: f64,
}

impl GridGeometry {
    pub fn new(
        ncols: usize,
        nrows: usize,
        x_origin: f64,
        y_origin: f64,
        cellsize: f64,
    ) -> Result<Self> {
        let g = GridGeometry {
            ncols,
            nrows,
            x_origin,
            y_origin,
            cellsize,
        };
        g.check()?;
        Ok(g)
    }

    fn check(&self) -> Result<()> {
        if self.ncols == 0 || self.nrows == 0 {
            return Err(Error::GridHeader("ncols and nrows must be >= 1".into()));
        }
        if !(self.cellsize.is_finite() && self.cellsize > 0.0) {
            return Err(Error::GridHeader("cellsize must be positive".into()));
        }
        if !self.x_origin.is_finite() || !self.y_origin.is_finite() {
            return Err(Error::GridHeader("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_max(&self) -> f64 {
        self.x_origin + self.ncols as f64 * self.cellsize
    }

    pub fn y_max(&self) -> f64 {
        self.y_origin + self.nrows as f64 * self.cellsize
    }

    /// Area of one cell in hectares.
    pub fn cell_area_ha(&self) -> f64 {
        self.cellsize * self.cellsize / 10_000.0
    }

    /// Area of the full grid extent in hectares.
    pub fn extent_area_ha(&self) -> f64 {
        self.cell_area_ha() * self.len() as f64
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.ncols + col
    }

    /// Cell bounds as `(x_min, y_min, x_max, y_max)`.
    pub fn cell_bounds(&self, col: usize, row: usize) -> (f64, f64, f64, f64) {
        let x0 = self.x_origin + col as f64 * self.cellsize;
        let y1 = self.y_max() - row as f64 * self.cellsize;
        (x0, y1 - self.cellsize, x0 + self.cellsize, y1)
    }

    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        let (x0, y0, x1, y1) = self.cell_bounds(col, row);
        (0.5 * (x0 + x1), 0.5 * (y0 + y1))
    }

    /// Cell containing the point, if any. Points on the east or north edge of
    /// the grid belong to the last column/first row.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if x < self.x_origin || x > self.x_max() || y < self.y_origin || y > self.y_max() {
            return None;
        }
        let col = (((x - self.x_origin) / self.cellsize).floor() as usize).min(self.ncols - 1);
        let row = (((self.y_max() - y) / self.cellsize).floor() as usize).min(self.nrows - 1);
        Some((col, row))
    }
}

/// Summary statistics over the valid cells of a grid. All statistics are
/// absent when no cell is valid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub n_valid: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub sum: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    geometry: GridGeometry,
    units: String,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl Grid {
    /// Builds a grid from raw values and a validity mask. Masked cells are
    /// normalised to 0.0; valid cells must be finite.
    pub fn new(
        geometry: GridGeometry,
        units: impl Into<String>,
        mut values: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        geometry.check()?;
        let n = geometry.len();
        if values.len() != n || valid.len() != n {
            return Err(Error::GridPayload(format!(
                "expected {n} cells, got {} values and {} mask entries",
                values.len(),
                valid.len()
            )));
        }
        for (i, (v, ok)) in values.iter_mut().zip(&valid).enumerate() {
            if *ok {
                if !v.is_finite() {
                    return Err(Error::GridPayload(format!("non-finite value at cell {i}")));
                }
            } else {
                *v = 0.0;
            }
        }
        Ok(Grid {
            geometry,
            units: units.into(),
            values,
            valid,
        })
    }

    /// Builds a grid treating non-finite values as nodata.
    pub fn from_values(geometry: GridGeometry, units: impl Into<String>, values: Vec<f32>) -> Result<Self> {
        let valid = values.iter().map(|v| v.is_finite()).collect();
        Grid::new(geometry, units, values, valid)
    }

    pub fn filled(geometry: GridGeometry, units: impl Into<String>, value: f32) -> Result<Self> {
        let n = geometry.len();
        Grid::new(geometry, units, vec![value; n], vec![true; n])
    }

    /// Builds a grid by evaluating `f(col, row)` for every cell; `None` masks
    /// the cell.
    pub fn from_fn<F>(geometry: GridGeometry, units: impl Into<String>, f: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> Option<f32> + Sync + Send,
    {
        geometry.check()?;
        let ncols = geometry.ncols;
        let cells: Vec<Option<f32>> = par::map_range(geometry.len(), |i| f(i % ncols, i / ncols));
        let valid = cells.iter().map(Option::is_some).collect();
        let values = cells.into_iter().map(|c| c.unwrap_or(0.0)).collect();
        Grid::new(geometry, units, values, valid)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn units(&self) -> &str {
        &self.units
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = units.into();
        self
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f32> {
        if col >= self.geometry.ncols || row >= self.geometry.nrows {
            return None;
        }
        self.get_index(self.geometry.index(col, row))
    }

    pub fn get_index(&self, i: usize) -> Option<f32> {
        if self.valid[i] {
            Some(self.values[i])
        } else {
            None
        }
    }

    /// Value at a map coordinate.
    pub fn sample(&self, x: f64, y: f64) -> Option<f32> {
        let (col, row) = self.geometry.locate(x, y)?;
        self.get(col, row)
    }

    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn is_aligned(&self, other: &Grid) -> bool {
        self.geometry == other.geometry
    }

    fn require_aligned(&self, other: &Grid) -> Result<()> {
        if self.is_aligned(other) {
            Ok(())
        } else {
            Err(Error::Misaligned)
        }
    }

    /// Applies `f` to every valid cell. Returning `None` masks the cell.
    pub fn map<F>(&self, f: F) -> Result<Grid>
    where
        F: Fn(f32) -> Option<f32> + Sync + Send,
    {
        let cells = par::map_range(self.len(), |i| self.get_index(i).and_then(&f));
        self.rebuild(cells, self.units.clone())
    }

    /// Cell-wise combination of two aligned grids. Cells masked in either
    /// operand are masked in the output.
    pub fn zip_with<F>(&self, other: &Grid, units: impl Into<String>, f: F) -> Result<Grid>
    where
        F: Fn(f32, f32) -> Option<f32> + Sync + Send,
    {
        self.require_aligned(other)?;
        let cells = par::map_range(self.len(), |i| match (self.get_index(i), other.get_index(i)) {
            (Some(a), Some(b)) => f(a, b),
            _ => None,
        });
        self.rebuild(cells, units.into())
    }

    fn rebuild(&self, cells: Vec<Option<f32>>, units: String) -> Result<Grid> {
        let valid = cells.iter().map(|c| matches!(c, Some(v) if v.is_finite())).collect();
        let values = cells.into_iter().map(|c| c.unwrap_or(0.0)).collect();
        Grid::new(self.geometry, units, values, valid)
    }

    /// Valid values in storage order.
    pub fn valid_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .map(|(v, _)| *v as f64)
            .collect()
    }
}

/// Masks prediction cells whose landcover class is in `removed_classes`, or
/// whose landcover is itself masked. Class codes are the landcover values
/// rounded to the nearest integer.
pub fn mask_landcover(pred: &Grid, landcover: &Grid, removed_classes: &BTreeSet<i64>) -> Result<Grid> {
    pred.zip_with(landcover, pred.units.clone(), |p, lc| {
        if removed_classes.contains(&(lc.round() as i64)) {
            None
        } else {
            Some(p)
        }
    })
}

/// `a - b` cell-wise.
pub fn difference(a: &Grid, b: &Grid) -> Result<Grid> {
    a.zip_with(b, a.units.clone(), |x, y| Some(((x as f64) - (y as f64)) as f32))
}

/// Maps every valid cell to `100 * (rank - 1) / (n_valid - 1)` with minimum
/// rank for ties.
pub fn percent_rank(grid: &Grid) -> Result<Grid> {
    let mut sorted = grid.valid_values();
    let n = sorted.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "percent rank needs at least 2 valid cells, found {n}"
        )));
    }
    par::sort_f64(&mut sorted);
    let denom = (n - 1) as f64;
    let pr = grid.map(|v| {
        let below = sorted.partition_point(|s| *s < v as f64);
        Some((100.0 * below as f64 / denom) as f32)
    })?;
    Ok(pr.with_units("percent"))
}

/// Clamps valid values to `[-limit, limit]`. Used only when exporting
/// display copies of difference maps.
pub fn cap(grid: &Grid, limit: f32) -> Result<Grid> {
    grid.map(|v| Some(v.clamp(-limit, limit)))
}

pub fn summarize(grid: &Grid) -> GridSummary {
    let mut n_valid = 0usize;
    let mut sum = 0.0f64;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (v, ok) in grid.values.iter().zip(&grid.valid) {
        if *ok {
            let v = *v as f64;
            n_valid += 1;
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
    }
    if n_valid == 0 {
        return GridSummary {
            n_valid,
            mean: None,
            min: None,
            max: None,
            sum: None,
        };
    }
    GridSummary {
        n_valid,
        mean: Some(sum / n_valid as f64),
        min: Some(min),
        max: Some(max),
        sum: Some(sum),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BinaryHeader {
    ncols: usize,
    nrows: usize,
    x_origin: f64,
    y_origin: f64,
    cellsize: f64,
    units: String,
    byte_order: String,
}

/// Options for ASCII output. `precision` is the number of significant
/// digits; `None` writes the shortest representation that parses back to
/// the identical `f32`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsciiOptions {
    pub precision: Option<usize>,
    pub nodata: f64,
}

impl Default for AsciiOptions {
    fn default() -> Self {
        AsciiOptions {
            precision: None,
            nodata: DEFAULT_NODATA,
        }
    }
}

pub fn read_grid(path: &Path, format: GridFormat) -> Result<Grid> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    match format {
        GridFormat::Binary => read_binary(&mut reader).map_err(|e| with_path(e, path)),
        GridFormat::Ascii => {
            let mut text = String::new();
            reader
                .read_to_string(&mut text)
                .map_err(|e| Error::io(path, e))?;
            parse_ascii(&text)
        }
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

pub fn write_grid(grid: &Grid, path: &Path, format: GridFormat) -> Result<()> {
    match format {
        GridFormat::Binary => write_binary(grid, path),
        GridFormat::Ascii => write_ascii(grid, path, AsciiOptions::default()),
    }
}

fn read_binary<R: BufRead>(reader: &mut R) -> Result<Grid> {
    let mut line = Vec::new();
    reader
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::io("", e))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::GridHeader("missing header line".into()));
    }
    line.pop();
    let header: BinaryHeader = serde_json::from_slice(&line)
        .map_err(|e| Error::GridHeader(format!("header is not valid JSON: {e}")))?;
    if header.byte_order != "little" {
        return Err(Error::GridHeader(format!(
            "unsupported byte_order `{}`",
            header.byte_order
        )));
    }
    let geometry = GridGeometry::new(
        header.ncols,
        header.nrows,
        header.x_origin,
        header.y_origin,
        header.cellsize,
    )?;
    let n = geometry.len();
    let mut payload = Vec::with_capacity(n * 5);
    reader
        .read_to_end(&mut payload)
        .map_err(|e| Error::io("", e))?;
    if payload.len() != n * 5 {
        return Err(Error::GridPayload(format!(
            "expected {} payload bytes for {n} cells, found {}",
            n * 5,
            payload.len()
        )));
    }
    let (value_bytes, mask_bytes) = payload.split_at(n * 4);
    let values: Vec<f32> = value_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mut valid = Vec::with_capacity(n);
    for (i, m) in mask_bytes.iter().enumerate() {
        match m {
            0 => valid.push(false),
            1 => valid.push(true),
            other => {
                return Err(Error::GridPayload(format!(
                    "mask byte {other} at cell {i} is neither 0 nor 1"
                )))
            }
        }
    }
    Grid::new(geometry, header.units, values, valid)
}

fn write_binary(grid: &Grid, path: &Path) -> Result<()> {
    let g = grid.geometry;
    let header = BinaryHeader {
        ncols: g.ncols,
        nrows: g.nrows,
        x_origin: g.x_origin,
        y_origin: g.y_origin,
        cellsize: g.cellsize,
        units: grid.units.clone(),
        byte_order: "little".into(),
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    bytes.reserve(grid.len() * 5);
    for v in &grid.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend(grid.valid.iter().map(|ok| u8::from(*ok)));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses an ESRI ASCII grid. `xllcenter`/`yllcenter` headers are converted
/// to corner coordinates.
pub fn parse_ascii(text: &str) -> Result<Grid> {
    let mut tokens = text.split_ascii_whitespace().peekable();
    let mut ncols = None;
    let mut nrows = None;
    let mut x = None;
    let mut y = None;
    let mut centered = (false, false);
    let mut cellsize = None;
    let mut nodata: Option<f64> = None;

    while let Some(key) = tokens.peek() {
        if key.parse::<f64>().is_ok() {
            break;
        }
        let key = tokens.next().unwrap().to_ascii_lowercase();
        let raw = tokens
            .next()
            .ok_or_else(|| Error::GridHeader(format!("header key `{key}` has no value")))?;
        let num: f64 = raw
            .parse()
            .map_err(|_| Error::GridHeader(format!("header `{key}` value `{raw}` is not numeric")))?;
        match key.as_str() {
            "ncols" => ncols = Some(parse_count(&key, num)?),
            "nrows" => nrows = Some(parse_count(&key, num)?),
            "xllcorner" => x = Some(num),
            "yllcorner" => y = Some(num),
            "xllcenter" => {
                x = Some(num);
                centered.0 = true;
            }
            "yllcenter" => {
                y = Some(num);
                centered.1 = true;
            }
            "cellsize" => cellsize = Some(num),
            "nodata_value" => nodata = Some(num),
            other => return Err(Error::GridHeader(format!("unknown header key `{other}`"))),
        }
    }
    let missing = |k: &str| Error::GridHeader(format!("missing `{k}`"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    let mut x = x.ok_or_else(|| missing("xllcorner"))?;
    let mut y = y.ok_or_else(|| missing("yllcorner"))?;
    if centered.0 {
        x -= cellsize / 2.0;
    }
    if centered.1 {
        y -= cellsize / 2.0;
    }
    let geometry = GridGeometry::new(ncols, nrows, x, y, cellsize)?;
    let n = geometry.len();
    let nodata32 = nodata.map(|v| v as f32);
    let mut values = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for tok in tokens {
        if values.len() == n {
            return Err(Error::GridPayload(format!("more than {n} values")));
        }
        let v: f32 = tok
            .parse()
            .map_err(|_| Error::GridPayload(format!("value `{tok}` is not numeric")))?;
        let is_nodata = nodata32.is_some_and(|nd| nd == v);
        if !is_nodata && !v.is_finite() {
            return Err(Error::GridPayload(format!(
                "non-finite value `{tok}` at cell {}",
                values.len()
            )));
        }
        values.push(if is_nodata { 0.0 } else { v });
        valid.push(!is_nodata);
    }
    if values.len() != n {
        return Err(Error::GridPayload(format!(
            "expected {n} values, found {}",
            values.len()
        )));
    }
    Grid::new(geometry, "", values, valid)
}

fn parse_count(key: &str, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::GridHeader(format!("`{key}` must be a positive integer")))
    }
}

pub fn write_ascii(grid: &Grid, path: &Path, opts: AsciiOptions) -> Result<()> {
    let text = format_ascii(grid, opts)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn format_ascii(grid: &Grid, opts: AsciiOptions) -> Result<String> {
    let g = grid.geometry;
    let nodata32 = opts.nodata as f32;
    let mut out = String::with_capacity(grid.len() * 8 + 128);
    out.push_str(&format!("ncols {}\n", g.ncols));
    out.push_str(&format!("nrows {}\n", g.nrows));
    out.push_str(&format!("xllcorner {}\n", g.x_origin));
    out.push_str(&format!("yllcorner {}\n", g.y_origin));
    out.push_str(&format!("cellsize {}\n", g.cellsize));
    out.push_str(&format!("NODATA_value {}\n", opts.nodata));
    for row in 0..g.nrows {
        for col in 0..g.ncols {
            if col > 0 {
                out.push(' ');
            }
            match grid.get(col, row) {
                Some(v) => {
                    if v == nodata32 {
                        return Err(Error::InvalidInput(format!(
                            "valid cell ({col}, {row}) equals the nodata sentinel {}",
                            opts.nodata
                        )));
                    }
                    out.push_str(&format_value(v, opts.precision));
                }
                None => out.push_str(&format!("{}", opts.nodata)),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

fn format_value(v: f32, precision: Option<usize>) -> String {
    match precision {
        None => format!("{v}"),
        Some(p) => {
            let p = p.max(1);
            let s = format!("{:.*e}", p - 1, v);
            // Keep plain decimals where they are exact enough and readable.
            match s.parse::<f64>() {
                Ok(parsed) if parsed.abs() >= 1e-3 && parsed.abs() < 1e7 || parsed == 0.0 => {
                    format!("{parsed}")
                }
                _ => s,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(ncols: usize, nrows: usize) -> GridGeometry {
        GridGeometry::new(ncols, nrows, 0.0, 0.0, 30.0).unwrap()
    }

    #[test]
    fn ascii_two_by_two_mean() {
        let g = parse_ascii(
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 30\nNODATA_value -9999\n1 2\n3 4\n",
        )
        .unwrap();
        let s = summarize(&g);
        assert_eq!(s.mean, Some(2.5));
        assert_eq!(s.sum, Some(10.0));
        assert_eq!(g.get(0, 0), Some(1.0));
        assert_eq!(g.get(1, 1), Some(4.0));
    }

    #[test]
    fn ascii_all_nodata_is_empty() {
        let g = parse_ascii(
            "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n-9999 -9999\n",
        )
        .unwrap();
        assert_eq!(g.n_valid(), 0);
        assert_eq!(summarize(&g).mean, None);
    }

    #[test]
    fn ascii_errors() {
        let bad_count =
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2 3\n";
        assert!(matches!(parse_ascii(bad_count), Err(Error::GridPayload(_))));
        let no_cellsize = "ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\n1\n";
        assert!(matches!(parse_ascii(no_cellsize), Err(Error::GridHeader(_))));
        let nan = "ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\nNaN\n";
        assert!(matches!(parse_ascii(nan), Err(Error::GridPayload(_))));
    }

    #[test]
    fn ascii_cell_center_header() {
        let g = parse_ascii("ncols 1\nnrows 1\nxllcenter 15\nyllcenter 15\ncellsize 30\n5\n").unwrap();
        assert_eq!(g.geometry().x_origin, 0.0);
        assert_eq!(g.geometry().y_origin, 0.0);
    }

    #[test]
    fn binary_masked_corner_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        let mut valid = vec![true; 9];
        valid[0] = false;
        let g = Grid::new(geom(3, 3), "Mg/ha", (0..9).map(|v| v as f32).collect(), valid).unwrap();
        write_grid(&g, &path, GridFormat::Binary).unwrap();
        let back = read_grid(&path, GridFormat::Binary).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.get(0, 0), None);
    }

    #[test]
    fn binary_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        let g = Grid::filled(geom(2, 2), "", 1.0).unwrap();
        write_grid(&g, &path, GridFormat::Binary).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_grid(&path, GridFormat::Binary),
            Err(Error::GridPayload(_))
        ));
    }

    #[test]
    fn mask_landcover_cases() {
        let pred = Grid::from_fn(geom(4, 4), "Mg/ha", |c, r| Some((c + r) as f32)).unwrap();
        let lc = Grid::from_fn(geom(4, 4), "class", |c, r| {
            Some(if (c + r) % 2 == 0 { 2.0 } else { 4.0 })
        })
        .unwrap();
        let none = mask_landcover(&pred, &lc, &BTreeSet::new()).unwrap();
        assert_eq!(none, pred);
        let all = mask_landcover(&pred, &lc, &[2, 4].into_iter().collect()).unwrap();
        assert_eq!(all.n_valid(), 0);
        let half = mask_landcover(&pred, &lc, &[2].into_iter().collect()).unwrap();
        assert_eq!(half.n_valid(), 8);

        let other = Grid::filled(geom(3, 3), "", 1.0).unwrap();
        assert!(matches!(
            mask_landcover(&pred, &other, &BTreeSet::new()),
            Err(Error::Misaligned)
        ));
    }

    #[test]
    fn masked_landcover_masks_prediction() {
        let pred = Grid::filled(geom(2, 1), "", 3.0).unwrap();
        let lc = Grid::new(geom(2, 1), "", vec![4.0, 4.0], vec![true, false]).unwrap();
        let out = mask_landcover(&pred, &lc, &BTreeSet::new()).unwrap();
        assert_eq!(out.get(0, 0), Some(3.0));
        assert_eq!(out.get(1, 0), None);
    }

    #[test]
    fn difference_cases() {
        let a = Grid::from_fn(geom(3, 2), "", |c, r| Some((c * 7 + r) as f32)).unwrap();
        let zero = difference(&a, &a).unwrap();
        assert!(zero.valid_values().iter().all(|v| *v == 0.0));

        let mut valid = vec![true; 6];
        valid[4] = false;
        let masked = Grid::new(*a.geometry(), "", a.values().to_vec(), valid).unwrap();
        let d = difference(&masked, &a).unwrap();
        assert_eq!(d.get_index(4), None);
        assert_eq!(d.n_valid(), 5);
    }

    #[test]
    fn percent_rank_cases() {
        let g = Grid::new(geom(3, 1), "", vec![20.0, 10.0, 30.0], vec![true; 3]).unwrap();
        let pr = percent_rank(&g).unwrap();
        assert_eq!(pr.values(), &[50.0, 0.0, 100.0]);

        let ties = Grid::filled(geom(4, 1), "", 3.0).unwrap();
        assert!(percent_rank(&ties).unwrap().values().iter().all(|v| *v == 0.0));

        let min_rank = Grid::new(geom(4, 1), "", vec![1.0, 2.0, 2.0, 3.0], vec![true; 4]).unwrap();
        let pr = percent_rank(&min_rank).unwrap();
        assert_eq!(pr.values()[1], pr.values()[2]);
        assert!((pr.values()[1] - 100.0 / 3.0).abs() < 1e-4);

        let single = Grid::new(geom(2, 1), "", vec![1.0, 0.0], vec![true, false]).unwrap();
        assert!(percent_rank(&single).is_err());
    }

    #[test]
    fn summarize_singleton() {
        let g = Grid::new(geom(2, 1), "", vec![7.0, 0.0], vec![true, false]).unwrap();
        let s = summarize(&g);
        assert_eq!(s.n_valid, 1);
        assert_eq!((s.mean, s.min, s.max), (Some(7.0), Some(7.0), Some(7.0)));
    }

    #[test]
    fn locate_orientation() {
        let g = geom(3, 2);
        // Row 0 is the northern row.
        assert_eq!(g.locate(1.0, 59.0), Some((0, 0)));
        assert_eq!(g.locate(89.0, 1.0), Some((2, 1)));
        assert_eq!(g.locate(-1.0, 1.0), None);
        assert_eq!(g.cell_center(0, 0), (15.0, 45.0));
    }

    #[test]
    fn cap_limits() {
        let g = Grid::new(geom(3, 1), "", vec![-50.0, 5.0, 45.0], vec![true; 3]).unwrap();
        assert_eq!(cap(&g, 30.0).unwrap().values(), &[-30.0, 5.0, 30.0]);
    }

    #[test]
    fn ascii_rejects_sentinel_collision() {
        let g = Grid::filled(geom(1, 1), "", -9999.0).unwrap();
        assert!(format_ascii(&g, AsciiOptions::default()).is_err());
    }
}
