//! Field inventory ingest: trees to plot-level AGB densities, single
//! inventory selection, panel-based partitioning and the model-development
//! filter.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum measured stem diameter, cm.
pub const MIN_DBH_CM: f64 = 12.7;
pub const SUBPLOT_RADIUS_M: f64 = 7.32;
pub const SUBPLOT_COUNT: usize = 4;
/// Maximum LiDAR canopy height for a nonforested plot to enter model
/// development as a zero-biomass plot.
pub const MAX_NONFOREST_CANOPY_M: f64 = 1.0;

/// Area of the four-subplot footprint in hectares (4 * pi * 7.32^2 m^2).
pub fn plot_area_ha() -> f64 {
    SUBPLOT_COUNT as f64 * std::f64::consts::PI * SUBPLOT_RADIUS_M * SUBPLOT_RADIUS_M / 10_000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allometry {
    Crm,
    Nsvb,
}

impl Allometry {
    pub const ALL: [Allometry; 2] = [Allometry::Crm, Allometry::Nsvb];

    pub fn as_str(&self) -> &'static str {
        match self {
            Allometry::Crm => "crm",
            Allometry::Nsvb => "nsvb",
        }
    }
}

impl std::str::FromStr for Allometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "crm" => Ok(Allometry::Crm),
            "nsvb" => Ok(Allometry::Nsvb),
            other => Err(Error::InvalidInput(format!("unknown allometry `{other}`"))),
        }
    }
}

impl std::fmt::Display for Allometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub plot_id: String,
    pub subplot: u8,
    pub species_code: String,
    pub dbh_cm: f64,
    pub agb_crm_kg: f64,
    pub agb_nsvb_kg: f64,
    pub inventory_year: i32,
}

impl TreeRecord {
    pub fn agb_kg(&self, allometry: Allometry) -> f64 {
        match allometry {
            Allometry::Crm => self.agb_crm_kg,
            Allometry::Nsvb => self.agb_nsvb_kg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRecord {
    pub plot_id: String,
    pub x: f64,
    pub y: f64,
    pub inventory_year: i32,
    pub panel: u8,
    pub forested_fraction: f64,
    pub max_canopy_height: Option<f64>,
    pub agb_crm: f64,
    pub agb_nsvb: f64,
}

impl PlotRecord {
    pub fn agb(&self, allometry: Allometry) -> f64 {
        match allometry {
            Allometry::Crm => self.agb_crm,
            Allometry::Nsvb => self.agb_nsvb,
        }
    }
}

/// Records loaded from a file together with the rows that were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct TreeRow {
    plot_id: String,
    subplot: u8,
    species_code: String,
    dbh_cm: f64,
    agb_crm_kg: f64,
    agb_nsvb_kg: f64,
    inventory_year: i32,
}

#[derive(Debug, Deserialize)]
struct PlotRow {
    plot_id: String,
    x_m: f64,
    y_m: f64,
    inventory_year: i32,
    panel: u8,
    forested_fraction: f64,
    max_canopy_height_m: Option<f64>,
}

const TREE_COLUMNS: [&str; 7] = [
    "plot_id",
    "subplot",
    "species_code",
    "dbh_cm",
    "agb_crm_kg",
    "agb_nsvb_kg",
    "inventory_year",
];

const PLOT_COLUMNS: [&str; 7] = [
    "plot_id",
    "x_m",
    "y_m",
    "inventory_year",
    "panel",
    "forested_fraction",
    "max_canopy_height_m",
];

fn open_csv(path: &Path, required: &[&str]) -> Result<csv::Reader<std::fs::File>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    for col in required {
        if !headers.iter().any(|h| h == *col) {
            return Err(Error::MissingColumn((*col).to_string()));
        }
    }
    Ok(rdr)
}

/// Reads `trees.csv`. Trees below the 12.7 cm DBH threshold are dropped with
/// a warning; negative biomass is an error.
pub fn load_trees(path: &Path) -> Result<Loaded<TreeRecord>> {
    let mut rdr = open_csv(path, &TREE_COLUMNS)?;
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, row) in rdr.deserialize::<TreeRow>().enumerate() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let line = i + 2;
        if !(1..=4).contains(&row.subplot) {
            return Err(Error::InvalidInput(format!(
                "line {line}: subplot {} outside 1..4",
                row.subplot
            )));
        }
        if !(row.agb_crm_kg >= 0.0 && row.agb_nsvb_kg >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "line {line}: negative or missing biomass for plot {}",
                row.plot_id
            )));
        }
        if !(row.dbh_cm >= MIN_DBH_CM) {
            let msg = format!(
                "line {line}: tree on plot {} has dbh {} cm below {MIN_DBH_CM} cm; dropped",
                row.plot_id, row.dbh_cm
            );
            log::debug!("{msg}");
            warnings.push(msg);
            continue;
        }
        records.push(TreeRecord {
            plot_id: row.plot_id,
            subplot: row.subplot,
            species_code: row.species_code,
            dbh_cm: row.dbh_cm,
            agb_crm_kg: row.agb_crm_kg,
            agb_nsvb_kg: row.agb_nsvb_kg,
            inventory_year: row.inventory_year,
        });
    }
    Ok(Loaded { records, warnings })
}

/// One row of `plots.csv` before biomass has been attached.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotLocation {
    pub plot_id: String,
    pub x: f64,
    pub y: f64,
    pub inventory_year: i32,
    pub panel: u8,
    pub forested_fraction: f64,
    pub max_canopy_height: Option<f64>,
}

pub fn load_plots(path: &Path) -> Result<Vec<PlotLocation>> {
    let mut rdr = open_csv(path, &PLOT_COLUMNS)?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<PlotRow>().enumerate() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let line = i + 2;
        if !(1..=5).contains(&row.panel) {
            return Err(Error::InvalidInput(format!(
                "line {line}: panel {} outside 1..5",
                row.panel
            )));
        }
        if !(0.0..=1.0).contains(&row.forested_fraction) {
            return Err(Error::InvalidInput(format!(
                "line {line}: forested_fraction {} outside [0, 1]",
                row.forested_fraction
            )));
        }
        out.push(PlotLocation {
            plot_id: row.plot_id,
            x: row.x_m,
            y: row.y_m,
            inventory_year: row.inventory_year,
            panel: row.panel,
            forested_fraction: row.forested_fraction,
            max_canopy_height: row.max_canopy_height_m,
        });
    }
    Ok(out)
}

/// Sums tree biomass per plot and converts to Mg/ha over the full
/// four-subplot area. Keys are plot ids; callers that mix inventory years
/// should filter trees to one year first or use [`plot_year_densities`].
pub fn aggregate_plot_agb(trees: &[TreeRecord], allometry: Allometry) -> BTreeMap<String, f64> {
    let area = plot_area_ha();
    let mut kg: BTreeMap<String, f64> = BTreeMap::new();
    for t in trees {
        *kg.entry(t.plot_id.clone()).or_insert(0.0) += t.agb_kg(allometry);
    }
    kg.into_iter()
        .map(|(id, total)| (id, total / area / 1000.0))
        .collect()
}

/// Densities for both allometries keyed by `(plot_id, inventory_year)`.
pub fn plot_year_densities(trees: &[TreeRecord]) -> BTreeMap<(String, i32), (f64, f64)> {
    let area = plot_area_ha();
    let mut kg: BTreeMap<(String, i32), (f64, f64)> = BTreeMap::new();
    for t in trees {
        let e = kg
            .entry((t.plot_id.clone(), t.inventory_year))
            .or_insert((0.0, 0.0));
        e.0 += t.agb_crm_kg;
        e.1 += t.agb_nsvb_kg;
    }
    kg.into_iter()
        .map(|(k, (c, n))| (k, (c / area / 1000.0, n / area / 1000.0)))
        .collect()
}

/// Attaches densities to plot rows. Plot visits without any tree carry
/// 0 Mg/ha.
pub fn attach_densities(plots: &[PlotLocation], trees: &[TreeRecord]) -> Vec<PlotRecord> {
    let dens = plot_year_densities(trees);
    plots
        .iter()
        .map(|p| {
            let (crm, nsvb) = dens
                .get(&(p.plot_id.clone(), p.inventory_year))
                .copied()
                .unwrap_or((0.0, 0.0));
            PlotRecord {
                plot_id: p.plot_id.clone(),
                x: p.x,
                y: p.y,
                inventory_year: p.inventory_year,
                panel: p.panel,
                forested_fraction: p.forested_fraction,
                max_canopy_height: p.max_canopy_height,
                agb_crm: crm,
                agb_nsvb: nsvb,
            }
        })
        .collect()
}

/// Keeps one inventory per plot, chosen uniformly at random. Output is
/// ordered by plot id.
pub fn select_single_inventory(plots: &[PlotRecord], seed: u64) -> Vec<PlotRecord> {
    let mut by_plot: BTreeMap<&str, Vec<&PlotRecord>> = BTreeMap::new();
    for p in plots {
        by_plot.entry(p.plot_id.as_str()).or_default().push(p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    by_plot
        .into_values()
        .map(|mut visits| {
            visits.sort_by_key(|p| p.inventory_year);
            (*visits.choose(&mut rng).expect("non-empty group")).clone()
        })
        .collect()
}

/// Which panel becomes the map-assessment set. Serialised as a panel number
/// or the string `"random"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Holdout {
    Panel(u8),
    Random,
}

impl Serialize for Holdout {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Holdout::Panel(p) => s.serialize_u8(*p),
            Holdout::Random => s.serialize_str("random"),
        }
    }
}

impl<'de> Deserialize<'de> for Holdout {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) if s == "random" => Ok(Holdout::Random),
            serde_json::Value::Number(n) => n
                .as_u64()
                .and_then(|v| u8::try_from(v).ok())
                .map(Holdout::Panel)
                .ok_or_else(|| serde::de::Error::custom("panel must be a small integer")),
            _ => Err(serde::de::Error::custom("expected a panel number or \"random\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPartition {
    pub model_development: Vec<PlotRecord>,
    pub map_assessment: Vec<PlotRecord>,
    pub holdout_panel: u8,
    pub seed: u64,
}

/// Sends every plot of the holdout panel to the assessment set and the rest
/// to model development.
pub fn split_by_panel(plots: &[PlotRecord], holdout: Holdout, seed: u64) -> Result<PlotPartition> {
    let holdout_panel = match holdout {
        Holdout::Panel(p) if (1..=5).contains(&p) => p,
        Holdout::Panel(p) => {
            return Err(Error::InvalidInput(format!("holdout panel {p} outside 1..5")))
        }
        Holdout::Random => ChaCha8Rng::seed_from_u64(seed).random_range(1..=5u8),
    };
    let (map_assessment, model_development): (Vec<_>, Vec<_>) = plots
        .iter()
        .cloned()
        .partition(|p| p.panel == holdout_panel);
    if map_assessment.is_empty() {
        return Err(Error::InvalidInput(format!(
            "holdout panel {holdout_panel} has no plots"
        )));
    }
    Ok(PlotPartition {
        model_development,
        map_assessment,
        holdout_panel,
        seed,
    })
}

/// Keeps fully forested plots and fully nonforested plots whose canopy is at
/// most 1 m tall (biomass forced to zero). Everything else is dropped;
/// nonforested plots without a canopy height produce a warning.
pub fn filter_model_dev(dev: &[PlotRecord]) -> Loaded<PlotRecord> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for p in dev {
        if p.forested_fraction == 1.0 {
            records.push(p.clone());
        } else if p.forested_fraction == 0.0 {
            match p.max_canopy_height {
                Some(h) if h <= MAX_NONFOREST_CANOPY_M => {
                    let mut zero = p.clone();
                    zero.agb_crm = 0.0;
                    zero.agb_nsvb = 0.0;
                    records.push(zero);
                }
                Some(_) => {}
                None => {
                    let msg = format!(
                        "nonforested plot {} ({}) has no canopy height; excluded",
                        p.plot_id, p.inventory_year
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
            }
        }
    }
    Loaded { records, warnings }
}

/// Distinct panels present in `plots`.
pub fn panels(plots: &[PlotRecord]) -> BTreeSet<u8> {
    plots.iter().map(|p| p.panel).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tree(plot: &str, kg: f64) -> TreeRecord {
        TreeRecord {
            plot_id: plot.into(),
            subplot: 1,
            species_code: "318".into(),
            dbh_cm: 20.0,
            agb_crm_kg: kg,
            agb_nsvb_kg: kg * 1.1,
            inventory_year: 2019,
        }
    }

    fn plot(id: &str, year: i32, panel: u8) -> PlotRecord {
        PlotRecord {
            plot_id: id.into(),
            x: 0.0,
            y: 0.0,
            inventory_year: year,
            panel,
            forested_fraction: 1.0,
            max_canopy_height: None,
            agb_crm: 50.0,
            agb_nsvb: 55.0,
        }
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const TREE_HEADER: &str =
        "plot_id,subplot,species_code,dbh_cm,agb_crm_kg,agb_nsvb_kg,inventory_year\n";

    #[test]
    fn plot_area_matches_fia_geometry() {
        let exact = 4.0 * std::f64::consts::PI * 7.32 * 7.32 / 10_000.0;
        assert!((plot_area_ha() - exact).abs() < 1e-15);
        assert!((plot_area_ha() / 0.067336 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn load_trees_cases() {
        let f = write_tmp(TREE_HEADER);
        assert!(load_trees(f.path()).unwrap().records.is_empty());

        let f = write_tmp(&format!("{TREE_HEADER}p1,1,318,25.0,90,100,2019\n"));
        let loaded = load_trees(f.path()).unwrap();
        assert_eq!(loaded.records.len(), 1);
        assert_eq!(loaded.records[0].agb_nsvb_kg, 100.0);

        let f = write_tmp(&format!("{TREE_HEADER}p1,1,318,10.0,90,100,2019\n"));
        let loaded = load_trees(f.path()).unwrap();
        assert!(loaded.records.is_empty());
        assert_eq!(loaded.warnings.len(), 1);

        let f = write_tmp(&format!("{TREE_HEADER}p1,1,318,20.0,-1,100,2019\n"));
        assert!(load_trees(f.path()).is_err());

        let f = write_tmp("plot_id,subplot\np1,1\n");
        assert!(matches!(load_trees(f.path()), Err(Error::MissingColumn(_))));
    }

    #[test]
    fn aggregate_density_arithmetic() {
        let d = aggregate_plot_agb(&[tree("a", 673.36 * 0.4), tree("a", 673.36 * 0.6)], Allometry::Crm);
        assert!((d["a"] - 10.0).abs() < 1e-3);
        let single = aggregate_plot_agb(&[tree("b", 67.336)], Allometry::Crm);
        assert!((single["b"] - 1.0).abs() < 1e-4);
        assert!(aggregate_plot_agb(&[], Allometry::Nsvb).is_empty());
    }

    #[test]
    fn plots_without_trees_have_zero_density() {
        let loc = PlotLocation {
            plot_id: "empty".into(),
            x: 0.0,
            y: 0.0,
            inventory_year: 2019,
            panel: 1,
            forested_fraction: 1.0,
            max_canopy_height: None,
        };
        let recs = attach_densities(&[loc], &[tree("other", 10.0)]);
        assert_eq!(recs[0].agb_crm, 0.0);
    }

    #[test]
    fn select_single_inventory_identity_and_determinism() {
        let once = vec![plot("a", 2010, 1)];
        assert_eq!(select_single_inventory(&once, 3), once);
        let many = vec![plot("a", 2005, 1), plot("a", 2010, 1), plot("b", 2019, 2)];
        let x = select_single_inventory(&many, 11);
        assert_eq!(x, select_single_inventory(&many, 11));
        assert_eq!(x.len(), 2);
    }

    #[test]
    fn select_single_inventory_is_uniform() {
        let visits = vec![plot("a", 2005, 1), plot("a", 2012, 1), plot("a", 2019, 1)];
        let mut counts = BTreeMap::new();
        let trials = 10_000;
        for seed in 0..trials {
            let chosen = select_single_inventory(&visits, seed);
            *counts.entry(chosen[0].inventory_year).or_insert(0) += 1;
        }
        for year in [2005, 2012, 2019] {
            let frac = counts[&year] as f64 / trials as f64;
            assert!((frac - 1.0 / 3.0).abs() < 0.05, "{year}: {frac}");
        }
    }

    #[test]
    fn split_by_panel_cases() {
        let plots: Vec<_> = (1..=5).map(|p| plot(&format!("p{p}"), 2019, p)).collect();
        let part = split_by_panel(&plots, Holdout::Panel(3), 0).unwrap();
        assert_eq!(part.map_assessment.len(), 1);
        assert_eq!(part.model_development.len(), 4);
        assert!(part.map_assessment.iter().all(|p| p.panel == 3));

        let a = split_by_panel(&plots, Holdout::Random, 99).unwrap();
        let b = split_by_panel(&plots, Holdout::Random, 99).unwrap();
        assert_eq!(a.holdout_panel, b.holdout_panel);

        let no_five: Vec<_> = plots.iter().filter(|p| p.panel != 5).cloned().collect();
        assert!(split_by_panel(&no_five, Holdout::Panel(5), 0).is_err());
    }

    #[test]
    fn filter_model_dev_rules() {
        let full = plot("f", 2019, 1);
        let mut bare = plot("n", 2019, 1);
        bare.forested_fraction = 0.0;
        bare.max_canopy_height = Some(0.5);
        let mut tall = bare.clone();
        tall.plot_id = "t".into();
        tall.max_canopy_height = Some(4.0);
        let mut unknown = bare.clone();
        unknown.plot_id = "u".into();
        unknown.max_canopy_height = None;
        let mut partial = plot("h", 2019, 1);
        partial.forested_fraction = 0.5;

        let out = filter_model_dev(&[full.clone(), bare, tall, unknown, partial]);
        let ids: Vec<_> = out.records.iter().map(|p| p.plot_id.as_str()).collect();
        assert_eq!(ids, ["f", "n"]);
        assert_eq!(out.records[1].agb_nsvb, 0.0);
        assert_eq!(out.records[1].agb_crm, 0.0);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn holdout_serde() {
        let h: Holdout = serde_json::from_str("\"random\"").unwrap();
        assert_eq!(h, Holdout::Random);
        let h: Holdout = serde_json::from_str("4").unwrap();
        assert_eq!(h, Holdout::Panel(4));
        assert_eq!(serde_json::to_string(&Holdout::Random).unwrap(), "\"random\"");
    }
}
