//! Stock and stock-change accounting, AGB to AGC conversion and the CRM to
//! NSVB rescaling regression.
//!
//! Totals are in million metric tons (Mt); densities in Mg/ha, so a total is
//! `density * area_ha / 1e6`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::inventory::{Allometry, PlotRecord};
use crate::ols;

/// Carbon fraction assumed under the CRM convention.
pub const CRM_CARBON_FRACTION: f64 = 0.5;

const SHARE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Expansion of inventory plot densities.
    Design,
    /// Aggregation of mapped densities.
    Model,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Design => "design",
            Method::Model => "model",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Agb,
    Agc,
}

impl Quantity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Quantity::Agb => "agb",
            Quantity::Agc => "agc",
        }
    }
}

/// Which area a mean map density is expanded over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "basis", rename_all = "snake_case")]
pub enum AreaBasis {
    /// Full grid extent, masked cells included.
    AllCells,
    /// Valid cells only.
    ValidCells,
    /// An externally supplied region area.
    Region { area_ha: f64 },
}

impl fmt::Display for AreaBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AreaBasis::AllCells => f.write_str("all_cells"),
            AreaBasis::ValidCells => f.write_str("valid_cells"),
            AreaBasis::Region { .. } => f.write_str("region"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockEstimate {
    pub year: i32,
    pub method: Method,
    pub allometry: Allometry,
    pub quantity: Quantity,
    pub area_basis: AreaBasis,
    /// Million metric tons.
    pub total_mt: f64,
    pub region_area_ha: f64,
}

impl StockEstimate {
    /// Mean density implied by the total, Mg/ha.
    pub fn density(&self) -> f64 {
        if self.region_area_ha > 0.0 {
            self.total_mt * 1e6 / self.region_area_ha
        } else {
            0.0
        }
    }
}

/// Mean valid density of `agb` expanded over the chosen area.
pub fn model_stock(agb: &Grid, year: i32, allometry: Allometry, basis: AreaBasis) -> Result<StockEstimate> {
    let valid = agb.valid_values();
    if valid.is_empty() {
        return Err(Error::Degenerate("AGB grid has no valid cells".into()));
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    let g = agb.geometry();
    let area = match basis {
        AreaBasis::AllCells => g.extent_area_ha(),
        AreaBasis::ValidCells => valid.len() as f64 * g.cell_area_ha(),
        AreaBasis::Region { area_ha } => {
            if !(area_ha > 0.0 && area_ha.is_finite()) {
                return Err(Error::InvalidInput(format!("region area must be positive, got {area_ha}")));
            }
            area_ha
        }
    };
    finish(year, Method::Model, allometry, basis, mean, area)
}

/// Simple-expansion estimate: mean plot density times the region area.
pub fn design_stock(plots: &[PlotRecord], allometry: Allometry, year: i32, region_area_ha: f64) -> Result<StockEstimate> {
    if plots.is_empty() {
        return Err(Error::InvalidInput("design-based stock needs at least one plot".into()));
    }
    if !(region_area_ha > 0.0 && region_area_ha.is_finite()) {
        return Err(Error::InvalidInput(format!("region area must be positive, got {region_area_ha}")));
    }
    let mean = plots.iter().map(|p| p.agb(allometry)).sum::<f64>() / plots.len() as f64;
    finish(
        year,
        Method::Design,
        allometry,
        AreaBasis::Region { area_ha: region_area_ha },
        mean,
        region_area_ha,
    )
}

fn finish(year: i32, method: Method, allometry: Allometry, basis: AreaBasis, mean: f64, area: f64) -> Result<StockEstimate> {
    if mean < 0.0 {
        return Err(Error::InvalidInput(format!("mean density is negative ({mean})")));
    }
    Ok(StockEstimate {
        year,
        method,
        allometry,
        quantity: Quantity::Agb,
        area_basis: basis,
        total_mt: mean * area / 1e6,
        region_area_ha: area,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesFraction {
    pub species_code: String,
    pub fraction: f64,
    pub agb_share: f64,
}

/// Species carbon fractions with their share of total AGB for one year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonFractionTable {
    entries: Vec<SpeciesFraction>,
}

impl CarbonFractionTable {
    pub fn new(entries: Vec<SpeciesFraction>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("carbon fraction table is empty".into()));
        }
        for e in &entries {
            if !(e.fraction > 0.0 && e.fraction < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "carbon fraction for {} must lie in (0,1), got {}",
                    e.species_code, e.fraction
                )));
            }
            if !(0.0..=1.0).contains(&e.agb_share) {
                return Err(Error::InvalidInput(format!(
                    "AGB share for {} must lie in [0,1], got {}",
                    e.species_code, e.agb_share
                )));
            }
        }
        Ok(CarbonFractionTable { entries })
    }

    pub fn entries(&self) -> &[SpeciesFraction] {
        &self.entries
    }
}

#[derive(Debug, Deserialize)]
struct FractionRow {
    species_code: String,
    fraction: f64,
    agb_share: f64,
    year: i32,
}

/// Reads `species_code, fraction, agb_share, year` rows, one table per year.
pub fn load_carbon_fractions(path: &Path) -> Result<BTreeMap<i32, CarbonFractionTable>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    for col in ["species_code", "fraction", "agb_share", "year"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MissingColumn(format!("{col} in {}", path.display())));
        }
    }
    let mut by_year: BTreeMap<i32, Vec<SpeciesFraction>> = BTreeMap::new();
    for row in rdr.deserialize::<FractionRow>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        by_year.entry(row.year).or_default().push(SpeciesFraction {
            species_code: row.species_code,
            fraction: row.fraction,
            agb_share: row.agb_share,
        });
    }
    by_year
        .into_iter()
        .map(|(y, e)| Ok((y, CarbonFractionTable::new(e)?)))
        .collect()
}

/// AGB-share-weighted mean carbon fraction.
pub fn weighted_carbon_fraction(table: &CarbonFractionTable) -> Result<f64> {
    let total: f64 = table.entries.iter().map(|e| e.agb_share).sum();
    if (total - 1.0).abs() > SHARE_TOLERANCE {
        return Err(Error::InvalidInput(format!("AGB shares sum to {total}, not 1")));
    }
    Ok(table.entries.iter().map(|e| e.agb_share * e.fraction).sum())
}

pub fn agb_to_agc(stock: &StockEstimate, fraction: f64) -> Result<StockEstimate> {
    if stock.quantity != Quantity::Agb {
        return Err(Error::InvalidInput("stock is already expressed as carbon".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidInput(format!("carbon fraction must lie in (0,1), got {fraction}")));
    }
    Ok(StockEstimate {
        quantity: Quantity::Agc,
        total_mt: stock.total_mt * fraction,
        ..stock.clone()
    })
}

/// `later - earlier` in Mt. Both estimates must share method, allometry,
/// quantity and area basis.
pub fn stock_change(later: &StockEstimate, earlier: &StockEstimate) -> Result<f64> {
    if later.method != earlier.method
        || later.allometry != earlier.allometry
        || later.quantity != earlier.quantity
        || later.area_basis.to_string() != earlier.area_basis.to_string()
    {
        return Err(Error::InvalidInput(format!(
            "cannot difference {}/{}/{}/{} against {}/{}/{}/{}",
            later.method.as_str(),
            later.allometry,
            later.quantity.as_str(),
            later.area_basis,
            earlier.method.as_str(),
            earlier.allometry,
            earlier.quantity.as_str(),
            earlier.area_basis
        )));
    }
    Ok(later.total_mt - earlier.total_mt)
}

/// Stock estimates laid out as method x allometry x year x quantity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StockTable {
    pub rows: Vec<StockEstimate>,
}

const STOCK_HEADER: [&str; 8] = [
    "method",
    "estimator",
    "allometry",
    "year",
    "quantity",
    "area_basis",
    "region_area_ha",
    "total_mt",
];

fn estimator(m: Method) -> &'static str {
    match m {
        Method::Design => "simple_expansion",
        Method::Model => "map_mean",
    }
}

impl StockTable {
    pub fn push(&mut self, s: StockEstimate) {
        self.rows.push(s);
    }

    pub fn find(&self, method: Method, allometry: Allometry, year: i32, quantity: Quantity, basis: &str) -> Option<&StockEstimate> {
        self.rows.iter().find(|r| {
            r.method == method
                && r.allometry == allometry
                && r.year == year
                && r.quantity == quantity
                && r.area_basis.to_string() == basis
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(STOCK_HEADER).map_err(|e| Error::csv(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.method.as_str().to_string(),
                estimator(r.method).to_string(),
                r.allometry.to_string(),
                r.year.to_string(),
                r.quantity.as_str().to_string(),
                r.area_basis.to_string(),
                r.region_area_ha.to_string(),
                r.total_mt.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// A change row: `later - earlier` for one provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockChange {
    pub method: Method,
    pub allometry: Allometry,
    pub quantity: Quantity,
    pub area_basis: String,
    pub from_year: i32,
    pub to_year: i32,
    pub delta_mt: f64,
}

/// Every change `to_year - from_year` that both years support.
pub fn stock_changes(table: &StockTable, from_year: i32, to_year: i32) -> Result<Vec<StockChange>> {
    let mut out = Vec::new();
    for later in table.rows.iter().filter(|r| r.year == to_year) {
        let basis = later.area_basis.to_string();
        if let Some(earlier) = table.find(later.method, later.allometry, from_year, later.quantity, &basis) {
            out.push(StockChange {
                method: later.method,
                allometry: later.allometry,
                quantity: later.quantity,
                area_basis: basis,
                from_year,
                to_year,
                delta_mt: stock_change(later, earlier)?,
            });
        }
    }
    Ok(out)
}

/// `NSVB = beta0 + beta1 * CRM + beta2 * elevation`, with held-out test
/// metrics. Test metrics are absent when nothing is held out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaleFit {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub test_rmse: Option<f64>,
    pub test_mae: Option<f64>,
    pub test_me: Option<f64>,
    pub test_r2: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

impl RescaleFit {
    pub fn predict(&self, crm: f64, elevation: f64) -> f64 {
        self.beta0 + self.beta1 * crm + self.beta2 * elevation
    }
}

/// Samples up to `n_sample` jointly valid cells without replacement, fits
/// the rescaling regression on the first `train_frac` of the sample and
/// scores it on the rest.
pub fn rescale_fit(
    nsvb: &Grid,
    crm: &Grid,
    elevation: &Grid,
    n_sample: usize,
    train_frac: f64,
    seed: u64,
) -> Result<RescaleFit> {
    if !nsvb.is_aligned(crm) || !nsvb.is_aligned(elevation) {
        return Err(Error::Misaligned);
    }
    if !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(Error::InvalidInput(format!("train fraction must lie in (0,1], got {train_frac}")));
    }
    let joint: Vec<usize> = (0..nsvb.len())
        .filter(|&i| nsvb.mask()[i] && crm.mask()[i] && elevation.mask()[i])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample: Vec<usize> = if joint.len() <= n_sample {
        let mut all = joint.clone();
        rand::seq::SliceRandom::shuffle(all.as_mut_slice(), &mut rng);
        all
    } else {
        rand::seq::index::sample(&mut rng, joint.len(), n_sample)
            .into_iter()
            .map(|k| joint[k])
            .collect()
    };
    let n_train = ((sample.len() as f64) * train_frac).round() as usize;
    if n_train < 3 {
        return Err(Error::Degenerate(format!(
            "rescale regression needs at least 3 training cells, got {n_train}"
        )));
    }
    let pick = |g: &Grid, idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| g.values()[i] as f64).collect() };
    let (train, test) = sample.split_at(n_train);
    let y = pick(nsvb, train);
    let c = pick(crm, train);
    let e = pick(elevation, train);
    let fit = ols::fit(&[&c, &e], &y)?;
    if fit.rank_deficient {
        return Err(Error::Degenerate(
            "CRM and elevation are collinear or constant over the sample".into(),
        ));
    }
    let mut out = RescaleFit {
        beta0: fit.intercept,
        beta1: fit.coefficients[0],
        beta2: fit.coefficients[1],
        test_rmse: None,
        test_mae: None,
        test_me: None,
        test_r2: None,
        n_train,
        n_test: test.len(),
    };
    if !test.is_empty() {
        let yt = pick(nsvb, test);
        let pred: Vec<f64> = test
            .iter()
            .map(|&i| out.predict(crm.values()[i] as f64, elevation.values()[i] as f64))
            .collect();
        let m = crate::agreement::basic_metrics(
            &crate::agreement::PairedSample::from_values(yt, pred)?,
            None,
        );
        out.test_rmse = m.rmse;
        out.test_mae = m.mae;
        out.test_me = m.me;
        out.test_r2 = m.r2;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;

    fn plot(agb: f64) -> PlotRecord {
        PlotRecord {
            plot_id: "p".into(),
            x: 0.0,
            y: 0.0,
            inventory_year: 2019,
            panel: 1,
            forested_fraction: 1.0,
            max_canopy_height: None,
            agb_crm: agb,
            agb_nsvb: agb * 1.1,
        }
    }

    #[test]
    fn model_stock_over_state_area() {
        let g = Grid::filled(GridGeometry::new(3, 3, 0.0, 0.0, 30.0).unwrap(), "Mg/ha", 100.0).unwrap();
        let s = model_stock(&g, 2019, Allometry::Crm, AreaBasis::Region { area_ha: 14_129_700.0 }).unwrap();
        assert!((s.total_mt - 1412.97).abs() < 1e-9);
        let z = Grid::filled(*g.geometry(), "Mg/ha", 0.0).unwrap();
        assert_eq!(model_stock(&z, 2019, Allometry::Crm, AreaBasis::AllCells).unwrap().total_mt, 0.0);
    }

    #[test]
    fn model_stock_area_bases() {
        let geom = GridGeometry::new(2, 2, 0.0, 0.0, 100.0).unwrap();
        let g = Grid::new(geom, "Mg/ha", vec![10.0, 20.0, 30.0, 0.0], vec![true, true, true, false]).unwrap();
        let all = model_stock(&g, 2005, Allometry::Nsvb, AreaBasis::AllCells).unwrap();
        let valid = model_stock(&g, 2005, Allometry::Nsvb, AreaBasis::ValidCells).unwrap();
        assert!((all.total_mt - 20.0 * 4.0 / 1e6).abs() < 1e-15);
        assert!((valid.total_mt - 20.0 * 3.0 / 1e6).abs() < 1e-15);
        let empty = Grid::new(geom, "", vec![0.0; 4], vec![false; 4]).unwrap();
        assert!(model_stock(&empty, 2005, Allometry::Crm, AreaBasis::AllCells).is_err());
    }

    #[test]
    fn design_stock_cases() {
        let s = design_stock(&[plot(50.0)], Allometry::Crm, 2019, 1e6).unwrap();
        assert!((s.total_mt - 50.0).abs() < 1e-12);
        assert!(design_stock(&[], Allometry::Crm, 2019, 1e6).is_err());
        let a = design_stock(&[plot(1.0), plot(7.0), plot(4.0)], Allometry::Nsvb, 2019, 10.0).unwrap();
        let b = design_stock(&[plot(4.0), plot(1.0), plot(7.0)], Allometry::Nsvb, 2019, 10.0).unwrap();
        assert_eq!(a.total_mt, b.total_mt);
    }

    fn table(rows: &[(f64, f64)]) -> CarbonFractionTable {
        CarbonFractionTable::new(
            rows.iter()
                .enumerate()
                .map(|(i, (f, s))| SpeciesFraction {
                    species_code: i.to_string(),
                    fraction: *f,
                    agb_share: *s,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn weighted_fraction_cases() {
        assert_eq!(weighted_carbon_fraction(&table(&[(0.5, 1.0)])).unwrap(), 0.5);
        let w = weighted_carbon_fraction(&table(&[(0.48, 0.6), (0.52, 0.4)])).unwrap();
        assert!((w - 0.496).abs() < 1e-15);
        assert!(weighted_carbon_fraction(&table(&[(0.48, 0.6), (0.52, 0.3)])).is_err());
        assert!(CarbonFractionTable::new(vec![SpeciesFraction {
            species_code: "x".into(),
            fraction: 1.0,
            agb_share: 1.0
        }])
        .is_err());
    }

    #[test]
    fn agc_conversion_and_change() {
        let mut s = design_stock(&[plot(1.0)], Allometry::Crm, 2019, 1e6).unwrap();
        s.total_mt = 1063.90;
        let c = agb_to_agc(&s, CRM_CARBON_FRACTION).unwrap();
        assert!((c.total_mt - 531.95).abs() < 1e-9);
        assert!(agb_to_agc(&c, 0.5).is_err());
        assert!(agb_to_agc(&s, 1.2).is_err());

        let mut earlier = s.clone();
        earlier.year = 2005;
        earlier.total_mt = 910.29;
        s.total_mt = 1038.87;
        assert!((stock_change(&s, &earlier).unwrap() - 128.58).abs() < 1e-9);
        assert_eq!(stock_change(&s, &s).unwrap(), 0.0);
        assert!(stock_change(&c, &earlier).is_err());
    }

    #[test]
    fn stock_table_changes_and_csv() {
        let mut t = StockTable::default();
        for (year, v) in [(2005, 10.0), (2019, 12.5)] {
            let mut s = design_stock(&[plot(v)], Allometry::Crm, year, 1e6).unwrap();
            t.push(s.clone());
            s = agb_to_agc(&s, 0.5).unwrap();
            t.push(s);
        }
        let ch = stock_changes(&t, 2005, 2019).unwrap();
        assert_eq!(ch.len(), 2);
        assert!((ch[0].delta_mt - 2.5).abs() < 1e-12);
        assert!((ch[1].delta_mt - 1.25).abs() < 1e-12);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stocks.csv");
        t.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("method,estimator,allometry,year"));
        assert_eq!(text.lines().count(), 5);
    }

    fn landscape(f: impl Fn(f64, f64) -> f64 + Sync + Send) -> (Grid, Grid, Grid) {
        let geom = GridGeometry::new(60, 50, 0.0, 0.0, 30.0).unwrap();
        let crm = Grid::from_fn(geom, "Mg/ha", |c, r| Some(((c * 7 + r * 13) % 97) as f32 * 3.0)).unwrap();
        let elev = Grid::from_fn(geom, "m", |c, r| Some((c * 20 + r * 3) as f32)).unwrap();
        let nsvb = crm
            .zip_with(&elev, "Mg/ha", |a, b| Some(f(a as f64, b as f64) as f32))
            .unwrap();
        (nsvb, crm, elev)
    }

    #[test]
    fn rescale_identity_map() {
        let (nsvb, crm, elev) = landscape(|c, _| c);
        let f = rescale_fit(&nsvb, &crm, &elev, 1_000_000, 0.8, 3).unwrap();
        assert!(f.beta0.abs() < 1e-6 && (f.beta1 - 1.0).abs() < 1e-9 && f.beta2.abs() < 1e-9);
        assert_eq!(f.n_train + f.n_test, 3000);
        assert_eq!(f.n_train, 2400);
    }

    #[test]
    fn rescale_full_training_has_no_test_metrics() {
        let (nsvb, crm, elev) = landscape(|c, e| 9.555 + 1.135 * c - 0.023 * e);
        let f = rescale_fit(&nsvb, &crm, &elev, 500, 1.0, 3).unwrap();
        assert_eq!((f.n_train, f.n_test), (500, 0));
        assert!(f.test_rmse.is_none());
        // f32 storage of the response limits precision.
        assert!((f.beta1 - 1.135).abs() < 1e-5);
        assert!((f.beta2 + 0.023).abs() < 1e-6);
    }

    #[test]
    fn rescale_rejects_constant_elevation() {
        let (nsvb, crm, _) = landscape(|c, _| c);
        let flat = Grid::filled(*crm.geometry(), "m", 100.0).unwrap();
        assert!(matches!(rescale_fit(&nsvb, &crm, &flat, 1000, 0.8, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rescale_is_seeded() {
        let (nsvb, crm, elev) = landscape(|c, e| 5.0 + c + 0.01 * e + ((c * 31.0) % 7.0));
        let a = rescale_fit(&nsvb, &crm, &elev, 1000, 0.8, 11).unwrap();
        let b = rescale_fit(&nsvb, &crm, &elev, 1000, 0.8, 11).unwrap();
        let c = rescale_fit(&nsvb, &crm, &elev, 1000, 0.8, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
