//! Synthetic data with known CRM/NSVB relationships.
//!
//! `write_dataset` produces a complete pipeline input set (trees, plots,
//! predictor layers, landcover, elevation, carbon fractions and a config).
//! The other generators feed specific checks: located reference/prediction
//! pairs with independent noise, and a large landscape following the
//! rescaling regression.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::agreement::{LocatedPairs, PairedSample};
use crate::error::{Error, Result};
use crate::footprint::{extract_weighted_mean, PlotFootprint, Point};
use crate::grid::{write_grid, Grid, GridFormat, GridGeometry};
use crate::inventory::plot_area_ha;
use crate::learners::{FeaturesPerSplit, LearnerSpec};
use crate::pipeline::PipelineConfig;

/// Rescaling coefficients used to derive NSVB from CRM and elevation.
pub const RESCALE_BETA: [f64; 3] = [9.555, 1.135, -0.023];

/// LCMAP-style primary landcover codes.
pub mod landcover {
    pub const DEVELOPED: i64 = 1;
    pub const CROPLAND: i64 = 2;
    pub const GRASS_SHRUB: i64 = 3;
    pub const TREE_COVER: i64 = 4;
    pub const WATER: i64 = 5;
    pub const WETLAND: i64 = 6;
    pub const BARREN: i64 = 8;
}

pub fn removed_classes() -> BTreeSet<i64> {
    [landcover::DEVELOPED, landcover::CROPLAND, landcover::WATER, landcover::BARREN].into()
}

pub const PREDICTOR_NAMES: [&str; 4] = ["nbr", "tc_green", "tc_wet", "elevation"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub ncols: usize,
    pub nrows: usize,
    pub cellsize: f64,
    pub n_plots: usize,
    pub years: [i32; 2],
    /// Mg/ha added to forest between the two map years.
    pub growth: f64,
    /// Plot-level deviation from the mapped truth, as a fraction of it.
    pub plot_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            ncols: 200,
            nrows: 200,
            cellsize: 1000.0,
            n_plots: 300,
            years: [2005, 2019],
            growth: 10.0,
            plot_noise: 0.15,
            seed: 42,
        }
    }
}

/// Sum of random plane waves mapped to roughly uniform values on [0, 1].
struct SmoothField {
    waves: Vec<(f64, f64, f64, f64)>,
    sd: f64,
}

impl SmoothField {
    fn new(rng: &mut ChaCha8Rng, extent: f64) -> Self {
        let waves: Vec<_> = (0..10)
            .map(|_| {
                let wavelength = extent * rng.random_range(0.15..0.8);
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                (k * theta.cos(), k * theta.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.3..1.0))
            })
            .collect();
        let sd = (waves.iter().map(|w| w.3 * w.3).sum::<f64>() / 2.0).sqrt();
        SmoothField { waves, sd }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let s: f64 = self.waves.iter().map(|(kx, ky, ph, a)| a * (kx * x + ky * y + ph).cos()).sum();
        // Logistic approximation of the normal CDF.
        1.0 / (1.0 + (-1.702 * s / self.sd).exp())
    }
}

/// Mapped layers of a synthetic landscape, keyed by year where they change.
#[derive(Debug, Clone)]
pub struct Landscape {
    pub geometry: GridGeometry,
    pub elevation: Grid,
    pub landcover: BTreeMap<i32, Grid>,
    pub crm: BTreeMap<i32, Grid>,
    pub nsvb: BTreeMap<i32, Grid>,
    pub predictors: BTreeMap<i32, Vec<Grid>>,
}

fn nsvb_from_crm(crm: f64, elev: f64) -> f64 {
    if crm <= 0.0 {
        0.0
    } else {
        (RESCALE_BETA[0] + RESCALE_BETA[1] * crm + RESCALE_BETA[2] * elev).max(0.0)
    }
}

fn classify(u: f64, v: f64, later: bool) -> i64 {
    use landcover::*;
    if v < 0.08 {
        WATER
    } else if v < 0.1 {
        BARREN
    } else if v > if later { 0.88 } else { 0.9 } {
        DEVELOPED
    } else if v < 0.16 {
        WETLAND
    } else if u < if later { 0.18 } else { 0.22 } {
        CROPLAND
    } else if u < 0.3 {
        GRASS_SHRUB
    } else {
        TREE_COVER
    }
}

pub fn generate_landscape(cfg: &SynthConfig) -> Result<Landscape> {
    let geometry = GridGeometry::new(cfg.ncols, cfg.nrows, 0.0, 0.0, cfg.cellsize)?;
    let extent = (cfg.ncols.max(cfg.nrows)) as f64 * cfg.cellsize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let biomass = SmoothField::new(&mut rng, extent);
    let cover = SmoothField::new(&mut rng, extent);
    let terrain = SmoothField::new(&mut rng, extent);
    let center = |c: usize, r: usize| geometry.cell_center(c, r);

    let elevation = Grid::from_fn(geometry, "m", |c, r| {
        let (x, y) = center(c, r);
        Some((50.0 + 1500.0 * terrain.eval(x, y)) as f32)
    })?;
    let [y0, y1] = cfg.years;
    let mut landcover = BTreeMap::new();
    let mut crm = BTreeMap::new();
    let mut nsvb = BTreeMap::new();
    for (year, later) in [(y0, false), (y1, true)] {
        let lc = Grid::from_fn(geometry, "class", |c, r| {
            let (x, y) = center(c, r);
            Some(classify(biomass.eval(x, y), cover.eval(x, y), later) as f32)
        })?;
        let truth = Grid::from_fn(geometry, "Mg/ha", |c, r| {
            let (x, y) = center(c, r);
            let u = biomass.eval(x, y);
            let v = cover.eval(x, y);
            let base = |late: bool| match classify(u, v, late) {
                landcover::TREE_COVER => 30.0 + 220.0 * u.powf(1.5),
                landcover::WETLAND => 20.0 + 80.0 * u,
                landcover::GRASS_SHRUB => 8.0 * u,
                _ => 0.0,
            };
            let mut agb = base(false);
            if later {
                let forest_then = agb >= 20.0;
                agb = base(true);
                if agb >= 20.0 {
                    agb += if forest_then { cfg.growth } else { 0.5 * cfg.growth };
                }
            }
            Some(agb as f32)
        })?;
        let ns = truth.zip_with(&elevation, "Mg/ha", |a, e| Some(nsvb_from_crm(a as f64, e as f64) as f32))?;
        landcover.insert(year, lc);
        crm.insert(year, truth);
        nsvb.insert(year, ns);
    }

    let mut predictors = BTreeMap::new();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    for year in cfg.years {
        let truth = &crm[&year];
        let lc = &landcover[&year];
        let n = geometry.len();
        let draws: Vec<[f64; 3]> = (0..n)
            .map(|_| [noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)])
            .collect();
        let layer = |f: &dyn Fn(f64, i64, [f64; 3]) -> f64| -> Result<Grid> {
            Grid::new(
                geometry,
                "index",
                (0..n)
                    .map(|i| {
                        let a = truth.values()[i] as f64;
                        let class = lc.values()[i].round() as i64;
                        f(a, class, draws[i]) as f32
                    })
                    .collect(),
                vec![true; n],
            )
        };
        let nbr = layer(&|a, _, d| 1.0 - (-a / 120.0).exp() + 0.04 * d[0])?;
        let green = layer(&|a, c, d| {
            0.15 + 0.0008 * a + if c == landcover::CROPLAND { 0.12 } else { 0.0 } + 0.03 * d[1]
        })?;
        let wet = layer(&|a, c, d| {
            -0.12 + 0.0006 * a + if c == landcover::WATER { 0.3 } else { 0.0 } + 0.03 * d[2]
        })?;
        predictors.insert(year, vec![nbr, green, wet, elevation.clone()]);
    }
    Ok(Landscape {
        geometry,
        elevation,
        landcover,
        crm,
        nsvb,
        predictors,
    })
}

const SPECIES: [(&str, f64); 8] = [
    ("318", 0.486),
    ("316", 0.476),
    ("833", 0.495),
    ("129", 0.505),
    ("531", 0.484),
    ("541", 0.479),
    ("371", 0.485),
    ("762", 0.487),
];

/// Writes a full input set under `dir` and returns the config path.
pub fn write_dataset(cfg: &SynthConfig, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let land = generate_landscape(cfg)?;
    let grids_dir = dir.join("grids");
    std::fs::create_dir_all(&grids_dir).map_err(|e| Error::io(&grids_dir, e))?;
    let rel = |name: String| PathBuf::from("grids").join(name);
    let save = |g: &Grid, name: &Path| write_grid(g, &dir.join(name), GridFormat::Binary);

    let elevation = rel("elevation.bin".into());
    save(&land.elevation, &elevation)?;
    let mut predictors = BTreeMap::new();
    let mut landcover = BTreeMap::new();
    for year in cfg.years {
        let mut paths = Vec::new();
        for (name, g) in PREDICTOR_NAMES.iter().zip(&land.predictors[&year]) {
            let p = if *name == "elevation" { elevation.clone() } else { rel(format!("{name}_{year}.bin")) };
            if *name != "elevation" {
                save(g, &p)?;
            }
            paths.push(p);
        }
        predictors.insert(year, paths);
        let lc = rel(format!("landcover_{year}.bin"));
        save(&land.landcover[&year], &lc)?;
        landcover.insert(year, lc);
        // Truth layers are not pipeline inputs; they support inspection.
        save(&land.crm[&year], &rel(format!("truth_crm_{year}.bin")))?;
        save(&land.nsvb[&year], &rel(format!("truth_nsvb_{year}.bin")))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_1a7e);
    write_plots_and_trees(cfg, &land, dir, &mut rng)?;
    write_fractions(cfg, dir, &mut rng)?;

    let config = PipelineConfig {
        seed: cfg.seed,
        trees: "trees.csv".into(),
        plots: "plots.csv".into(),
        predictor_names: PREDICTOR_NAMES.iter().map(|s| s.to_string()).collect(),
        predictors,
        landcover,
        elevation,
        carbon_fractions: "carbon_fractions.csv".into(),
        learner_grids: demo_learner_grid(),
        removed_classes: removed_classes(),
        out_dir: "out".into(),
        ..PipelineConfig::template()
    };
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// A small search grid that keeps demo runs fast.
pub fn demo_learner_grid() -> Vec<Vec<LearnerSpec>> {
    vec![
        vec![LearnerSpec::Knn { k: 5 }, LearnerSpec::Knn { k: 15 }],
        vec![
            LearnerSpec::BaggedTrees {
                n_trees: 60,
                max_depth: Some(8),
                features_per_split: FeaturesPerSplit::Sqrt,
            },
            LearnerSpec::BaggedTrees {
                n_trees: 60,
                max_depth: None,
                features_per_split: FeaturesPerSplit::All,
            },
        ],
        vec![
            LearnerSpec::BoostedTrees {
                n_trees: 100,
                learning_rate: 0.05,
                max_depth: 3,
            },
            LearnerSpec::BoostedTrees {
                n_trees: 100,
                learning_rate: 0.1,
                max_depth: 2,
            },
        ],
    ]
}

fn write_plots_and_trees(cfg: &SynthConfig, land: &Landscape, dir: &Path, rng: &mut ChaCha8Rng) -> Result<()> {
    let plots_path = dir.join("plots.csv");
    let trees_path = dir.join("trees.csv");
    let mut plots = csv::Writer::from_path(&plots_path).map_err(|e| Error::csv(&plots_path, e))?;
    let mut trees = csv::Writer::from_path(&trees_path).map_err(|e| Error::csv(&trees_path, e))?;
    let perr = |e| Error::csv(&plots_path, e);
    let terr = |e| Error::csv(&trees_path, e);
    plots
        .write_record([
            "plot_id",
            "x_m",
            "y_m",
            "inventory_year",
            "panel",
            "forested_fraction",
            "max_canopy_height_m",
        ])
        .map_err(perr)?;
    trees
        .write_record([
            "plot_id",
            "subplot",
            "species_code",
            "dbh_cm",
            "agb_crm_kg",
            "agb_nsvb_kg",
            "inventory_year",
        ])
        .map_err(terr)?;

    let g = land.geometry;
    let margin = 60.0;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let [y0, y1] = cfg.years;
    for i in 0..cfg.n_plots {
        let id = format!("P{:04}", i + 1);
        let x = rng.random_range(g.x_origin + margin..g.x_max() - margin);
        let y = rng.random_range(g.y_origin + margin..g.y_max() - margin);
        let panel = (i % 5 + 1) as u8;
        let first = rng.random_bool(0.8);
        let second = !first || rng.random_bool(0.8);
        let mut visits = Vec::new();
        if first {
            visits.push(rng.random_range(y0 - 3..=y0 + 3));
        }
        if second {
            visits.push(rng.random_range(y1 - 6..=y1));
        }
        let fp = PlotFootprint::new(Point::new(x, y));
        let (col, row) = g.locate(x, y).expect("plot inside grid");
        for year in visits {
            let map_year = if (year - y0).abs() <= (year - y1).abs() { y0 } else { y1 };
            let class = land.landcover[&map_year].get(col, row).unwrap_or(0.0).round() as i64;
            let (forested, canopy) = match class {
                landcover::TREE_COVER => (1.0, Some(rng.random_range(12.0..30.0))),
                landcover::WETLAND => (0.5, Some(rng.random_range(3.0..15.0))),
                landcover::GRASS_SHRUB if rng.random_bool(0.3) => (0.0, Some(rng.random_range(1.5..4.0))),
                _ if rng.random_bool(0.05) => (0.0, None),
                _ => (0.0, Some(rng.random_range(0.0..1.0))),
            };
            let truth = extract_weighted_mean(&land.crm[&map_year], &fp).unwrap_or(0.0);
            let elev = extract_weighted_mean(&land.elevation, &fp).unwrap_or(0.0);
            let crm_density = if forested > 0.0 {
                (truth * (1.0 + cfg.plot_noise * noise.sample(rng))).max(0.0)
            } else {
                0.0
            };
            let nsvb_density = nsvb_from_crm(crm_density, elev) * (1.0 + 0.03 * noise.sample(rng));
            plots
                .write_record([
                    id.clone(),
                    format!("{x:.3}"),
                    format!("{y:.3}"),
                    year.to_string(),
                    panel.to_string(),
                    forested.to_string(),
                    canopy.map(|h| format!("{h:.2}")).unwrap_or_default(),
                ])
                .map_err(perr)?;
            if crm_density <= 0.0 {
                continue;
            }
            let total_kg = crm_density * plot_area_ha() * 1000.0;
            let ratio = nsvb_density.max(0.0) / crm_density;
            let m = rng.random_range(5..=25);
            let w: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
            let wsum: f64 = w.iter().sum();
            let saplings = rng.random_range(0..=3);
            for (k, wk) in w.iter().map(Some).chain((0..saplings).map(|_| None)).enumerate() {
                let (kg, dbh) = match wk {
                    Some(wk) => {
                        let kg = total_kg * wk / wsum;
                        (kg, ((kg / 0.12).powf(1.0 / 2.4)).max(12.7))
                    }
                    None => (rng.random_range(1.0..20.0), rng.random_range(2.5..12.6)),
                };
                let species = SPECIES.choose(rng).expect("species list").0;
                trees
                    .write_record([
                        id.clone(),
                        (k % 4 + 1).to_string(),
                        species.to_string(),
                        format!("{dbh:.2}"),
                        kg.to_string(),
                        (kg * ratio).to_string(),
                        year.to_string(),
                    ])
                    .map_err(terr)?;
            }
        }
    }
    plots.flush().map_err(|e| Error::io(&plots_path, e))?;
    trees.flush().map_err(|e| Error::io(&trees_path, e))
}

fn write_fractions(cfg: &SynthConfig, dir: &Path, rng: &mut ChaCha8Rng) -> Result<()> {
    let path = dir.join("carbon_fractions.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    w.write_record(["species_code", "fraction", "agb_share", "year"])
        .map_err(|e| Error::csv(&path, e))?;
    for year in cfg.years {
        // Integer parts per million keep the written shares summing to one.
        let raw: Vec<f64> = SPECIES.iter().map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut ppm: Vec<u64> = raw.iter().map(|r| (r / total * 1e6).floor() as u64).collect();
        let used: u64 = ppm.iter().sum();
        ppm[0] += 1_000_000 - used;
        for ((code, fraction), share) in SPECIES.iter().zip(&ppm) {
            w.write_record([
                code.to_string(),
                fraction.to_string(),
                format!("{:.6}", *share as f64 / 1e6),
                year.to_string(),
            ])
            .map_err(|e| Error::csv(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// `n` located pairs over a `width_m` x `height_m` region: `y` follows a
/// smooth field in [0, 300] Mg/ha and `yhat = y + N(0, noise_sd)`.
pub fn located_pairs(width_m: f64, height_m: f64, n: usize, noise_sd: f64, seed: u64) -> Result<LocatedPairs> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = SmoothField::new(&mut rng, width_m.max(height_m));
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut locations = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut yhat = Vec::with_capacity(n);
    for _ in 0..n {
        let px = rng.random_range(0.0..width_m);
        let py = rng.random_range(0.0..height_m);
        let v = 300.0 * field.eval(px, py);
        locations.push((px, py));
        y.push(v);
        yhat.push(v + noise.sample(&mut rng));
    }
    let ids = (0..n).map(|i| format!("s{i}")).collect();
    LocatedPairs::new(PairedSample::new(ids, y, yhat)?, locations)
}

/// Aligned `(nsvb, crm, elevation)` grids with
/// `nsvb = 9.555 + 1.135 crm - 0.023 elev + N(0, noise_sd)`, CRM uniform on
/// [0, 300] Mg/ha and elevation uniform on [0, 2000] m. NSVB is not clipped.
pub fn rescale_landscape(ncols: usize, nrows: usize, noise_sd: f64, seed: u64) -> Result<(Grid, Grid, Grid)> {
    let geometry = GridGeometry::new(ncols, nrows, 0.0, 0.0, 30.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = geometry.len();
    let crm: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..300.0f32)).collect();
    let elev: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..2000.0f32)).collect();
    let nsvb: Vec<f32> = if noise_sd > 0.0 {
        let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
        crm.iter()
            .zip(&elev)
            .map(|(c, e)| {
                (RESCALE_BETA[0] + RESCALE_BETA[1] * *c as f64 + RESCALE_BETA[2] * *e as f64 + noise.sample(&mut rng)) as f32
            })
            .collect()
    } else {
        crm.iter()
            .zip(&elev)
            .map(|(c, e)| (RESCALE_BETA[0] + RESCALE_BETA[1] * *c as f64 + RESCALE_BETA[2] * *e as f64) as f32)
            .collect()
    };
    Ok((
        Grid::from_values(geometry, "Mg/ha", nsvb)?,
        Grid::from_values(geometry, "Mg/ha", crm)?,
        Grid::from_values(geometry, "m", elev)?,
    ))
}
