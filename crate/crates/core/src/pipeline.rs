//! End-to-end orchestration: configuration, validation, staged execution
//! with an on-disk manifest, and report emission.
//!
//! Every stage reads its inputs from files written by upstream stages, so a
//! partial run can reuse outputs recorded in `manifest.json` as long as the
//! configuration hash still matches.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agreement::{self, LocatedPairs, MetricsReport, PairedSample};
use crate::carbon::{self, AreaBasis, Method, Quantity, StockEstimate, StockTable};
use crate::error::{Error, Result};
use crate::footprint::{pixel_overlap_weights, weighted_mean, PlotFootprint, Point};
use crate::grid::{self, read_grid, write_grid, AsciiOptions, Grid, GridFormat, GridGeometry};
use crate::hexscale::BBox;
use crate::inventory::{self, Allometry, Holdout, PlotRecord};
use crate::learners::{predict_grid, EnsembleModel, FeatureMatrix, LearnerSpec};
use crate::par;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

/// Limit applied to difference maps in report display copies.
pub const DISPLAY_CAP: f32 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescaleConfig {
    pub n_sample: usize,
    pub train_frac: f64,
}

impl Default for RescaleConfig {
    fn default() -> Self {
        RescaleConfig {
            n_sample: 1_000_000,
            train_frac: 0.8,
        }
    }
}

fn default_holdout() -> Holdout {
    Holdout::Random
}
fn default_scales() -> Vec<f64> {
    agreement::DEFAULT_SCALES_KM.to_vec()
}
fn default_removed() -> BTreeSet<i64> {
    [1, 2, 5, 8].into()
}
fn default_folds() -> usize {
    5
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Pipeline configuration. Relative paths resolve against the directory of
/// the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub trees: PathBuf,
    pub plots: PathBuf,
    /// Feature names, in the order of each year's predictor paths.
    pub predictor_names: Vec<String>,
    /// Predictor layer paths per map year.
    pub predictors: BTreeMap<i32, Vec<PathBuf>>,
    pub landcover: BTreeMap<i32, PathBuf>,
    pub elevation: PathBuf,
    pub carbon_fractions: PathBuf,
    #[serde(default = "default_holdout")]
    pub holdout_panel: Holdout,
    #[serde(default = "default_scales")]
    pub scales_km: Vec<f64>,
    #[serde(default = "LearnerSpec::default_grid")]
    pub learner_grids: Vec<Vec<LearnerSpec>>,
    #[serde(default = "default_removed")]
    pub removed_classes: BTreeSet<i64>,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    #[serde(default)]
    pub rescale: RescaleConfig,
    /// Region area for stock expansion; the grid extent when absent.
    #[serde(default)]
    pub region_area_ha: Option<f64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    /// A config with every optional field at its default and empty paths.
    pub fn template() -> Self {
        PipelineConfig {
            seed: 0,
            trees: PathBuf::new(),
            plots: PathBuf::new(),
            predictor_names: Vec::new(),
            predictors: BTreeMap::new(),
            landcover: BTreeMap::new(),
            elevation: PathBuf::new(),
            carbon_fractions: PathBuf::new(),
            holdout_panel: default_holdout(),
            scales_km: default_scales(),
            learner_grids: LearnerSpec::default_grid(),
            removed_classes: default_removed(),
            cv_folds: default_folds(),
            rescale: RescaleConfig::default(),
            region_area_ha: None,
            out_dir: default_out(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_path(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    pub fn map_years(&self) -> Vec<i32> {
        self.predictors.keys().copied().collect()
    }

    /// Every input file the config references, deduplicated, in a fixed order.
    pub fn input_files(&self) -> Vec<PathBuf> {
        let mut files = vec![
            self.trees.clone(),
            self.plots.clone(),
            self.elevation.clone(),
            self.carbon_fractions.clone(),
        ];
        for paths in self.predictors.values() {
            files.extend(paths.iter().cloned());
        }
        files.extend(self.landcover.values().cloned());
        let mut seen = BTreeSet::new();
        files.retain(|f| seen.insert(f.clone()));
        files
    }
}

/// SHA-256 over the config (output directory excluded) and the contents of
/// every referenced input file.
pub fn config_hash(cfg: &PipelineConfig) -> Result<String> {
    let mut hashed = cfg.clone();
    hashed.out_dir = PathBuf::new();
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&hashed)?);
    for f in cfg.input_files() {
        let p = cfg.resolve(&f);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update(f.to_string_lossy().as_bytes());
        h.update(Sha256::digest(&bytes));
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    MissingFile,
    Alignment,
    ClassCode,
    InvalidValue,
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FindingKind::MissingFile => "missing file",
            FindingKind::Alignment => "alignment",
            FindingKind::ClassCode => "class code",
            FindingKind::InvalidValue => "invalid value",
        })
    }
}

/// One problem found while validating a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.kind, self.subject, self.message)
    }
}

/// Checks paths, class codes, grid alignment and parameter ranges. An empty
/// list means the config is usable.
pub fn validate(cfg: &PipelineConfig) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |kind, subject: &str, message: String| {
        out.push(Finding {
            kind,
            subject: subject.to_string(),
            message,
        })
    };

    for f in cfg.input_files() {
        let p = cfg.resolve(&f);
        if !p.is_file() {
            push(FindingKind::MissingFile, &f.display().to_string(), format!("{} does not exist", p.display()));
        }
    }

    for code in &cfg.removed_classes {
        if !(1..=8).contains(code) {
            push(FindingKind::ClassCode, "removed_classes", format!("{code} is not a landcover class (1-8)"));
        }
    }
    if cfg.predictors.is_empty() {
        push(FindingKind::InvalidValue, "predictors", "no map years configured".into());
    }
    if cfg.predictor_names.is_empty() {
        push(FindingKind::InvalidValue, "predictor_names", "no predictors named".into());
    }
    let names: BTreeSet<&String> = cfg.predictor_names.iter().collect();
    if names.len() != cfg.predictor_names.len() {
        push(FindingKind::InvalidValue, "predictor_names", "names must be unique".into());
    }
    for (year, paths) in &cfg.predictors {
        if paths.len() != cfg.predictor_names.len() {
            push(
                FindingKind::InvalidValue,
                &format!("predictors.{year}"),
                format!("{} layers for {} predictor names", paths.len(), cfg.predictor_names.len()),
            );
        }
        if !cfg.landcover.contains_key(year) {
            push(FindingKind::InvalidValue, &format!("landcover.{year}"), "no landcover layer for this map year".into());
        }
    }
    if let Holdout::Panel(p) = cfg.holdout_panel {
        if !(1..=5).contains(&p) {
            push(FindingKind::InvalidValue, "holdout_panel", format!("{p} is outside 1-5"));
        }
    }
    if cfg.scales_km.is_empty() || cfg.scales_km.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        push(FindingKind::InvalidValue, "scales_km", "scales must be a non-empty list of positive km values".into());
    }
    if cfg.cv_folds < 2 {
        push(FindingKind::InvalidValue, "cv_folds", "at least 2 folds are needed".into());
    }
    if cfg.learner_grids.is_empty() || cfg.learner_grids.iter().any(Vec::is_empty) {
        push(FindingKind::InvalidValue, "learner_grids", "every learner family needs at least one setting".into());
    }
    for spec in cfg.learner_grids.iter().flatten() {
        if let Err(e) = spec.validate() {
            push(FindingKind::InvalidValue, "learner_grids", e.to_string());
        }
    }
    if !(cfg.rescale.train_frac > 0.0 && cfg.rescale.train_frac <= 1.0) {
        push(FindingKind::InvalidValue, "rescale.train_frac", "must lie in (0, 1]".into());
    }
    if cfg.rescale.n_sample < 3 {
        push(FindingKind::InvalidValue, "rescale.n_sample", "must be at least 3".into());
    }
    if let Some(a) = cfg.region_area_ha {
        if !(a.is_finite() && a > 0.0) {
            push(FindingKind::InvalidValue, "region_area_ha", "must be positive".into());
        }
    }

    // Grid alignment against the elevation layer.
    let elev_path = cfg.resolve(&cfg.elevation);
    if elev_path.is_file() {
        match read_grid(&elev_path, GridFormat::from_path(&elev_path)) {
            Err(e) => push(FindingKind::InvalidValue, "elevation", e.to_string()),
            Ok(elev) => {
                let reference = *elev.geometry();
                let mut layers: Vec<(String, PathBuf)> = Vec::new();
                for (year, paths) in &cfg.predictors {
                    for (i, p) in paths.iter().enumerate() {
                        let name = cfg.predictor_names.get(i).cloned().unwrap_or_else(|| i.to_string());
                        layers.push((format!("predictors.{year}.{name}"), p.clone()));
                    }
                }
                for (year, p) in &cfg.landcover {
                    layers.push((format!("landcover.{year}"), p.clone()));
                }
                let mut checked = BTreeMap::new();
                for (subject, p) in layers {
                    let full = cfg.resolve(&p);
                    if !full.is_file() {
                        continue;
                    }
                    let geom = match checked.get(&full) {
                        Some(g) => *g,
                        None => match read_grid(&full, GridFormat::from_path(&full)) {
                            Ok(g) => {
                                checked.insert(full.clone(), *g.geometry());
                                *g.geometry()
                            }
                            Err(e) => {
                                push(FindingKind::InvalidValue, &subject, e.to_string());
                                continue;
                            }
                        },
                    };
                    if geom != reference {
                        push(FindingKind::Alignment, &subject, format!("{} is not aligned with the elevation grid", p.display()));
                    }
                }
            }
        }
    }

    let cf_path = cfg.resolve(&cfg.carbon_fractions);
    if cf_path.is_file() {
        match carbon::load_carbon_fractions(&cf_path) {
            Err(e) => push(FindingKind::InvalidValue, "carbon_fractions", e.to_string()),
            Ok(tables) => {
                for year in cfg.map_years() {
                    match tables.get(&year) {
                        None => push(
                            FindingKind::InvalidValue,
                            "carbon_fractions",
                            format!("no carbon fractions for map year {year}"),
                        ),
                        Some(t) => {
                            if let Err(e) = carbon::weighted_carbon_fraction(t) {
                                push(FindingKind::InvalidValue, "carbon_fractions", format!("{year}: {e}"));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Extract,
    Fit,
    Predict,
    Assess,
    Agree,
    Diff,
    Stocks,
    Rescale,
    Report,
}

impl Stage {
    /// Every stage in execution order.
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Extract,
        Stage::Fit,
        Stage::Predict,
        Stage::Assess,
        Stage::Agree,
        Stage::Diff,
        Stage::Stocks,
        Stage::Rescale,
        Stage::Report,
    ];

    /// The analysis stages (everything except the report).
    pub const ANALYSIS: [Stage; 9] = [
        Stage::Ingest,
        Stage::Extract,
        Stage::Fit,
        Stage::Predict,
        Stage::Assess,
        Stage::Agree,
        Stage::Diff,
        Stage::Stocks,
        Stage::Rescale,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Extract => "extract",
            Stage::Fit => "fit",
            Stage::Predict => "predict",
            Stage::Assess => "assess",
            Stage::Agree => "agree",
            Stage::Diff => "diff",
            Stage::Stocks => "stocks",
            Stage::Rescale => "rescale",
            Stage::Report => "report",
        }
    }

    /// Stages whose outputs this stage reads.
    pub fn upstream(&self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Extract => &[Stage::Ingest],
            Stage::Fit => &[Stage::Extract],
            Stage::Predict => &[Stage::Fit],
            Stage::Assess => &[Stage::Ingest, Stage::Fit, Stage::Predict],
            Stage::Agree => &[Stage::Predict],
            Stage::Diff => &[Stage::Predict],
            Stage::Stocks => &[Stage::Ingest, Stage::Predict],
            Stage::Rescale => &[Stage::Predict],
            Stage::Report => &[
                Stage::Assess,
                Stage::Agree,
                Stage::Diff,
                Stage::Stocks,
                Stage::Rescale,
            ],
        }
    }

    /// Parses a comma-separated list; `all` expands to every analysis stage.
    pub fn parse_list(s: &str) -> Result<Vec<Stage>> {
        let mut out = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend(Stage::ANALYSIS);
            } else {
                out.insert(part.parse()?);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidInput("no stages selected".into()));
        }
        Ok(out.into_iter().collect())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Output files relative to the output directory.
    pub outputs: Vec<String>,
    pub seconds: f64,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub artifact_version: String,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl RunManifest {
    pub fn load(out_dir: &Path) -> Result<Option<RunManifest>> {
        let p = out_dir.join(MANIFEST_FILE);
        if !p.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    fn save(&self, out_dir: &Path) -> Result<()> {
        let p = out_dir.join(MANIFEST_FILE);
        fs::write(&p, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&p, e))
    }

    fn complete(&self, stage: Stage, out_dir: &Path) -> bool {
        self.stages
            .get(&stage)
            .is_some_and(|r| r.outputs.iter().all(|o| out_dir.join(o).is_file()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Recompute requested stages even when cached outputs are valid.
    pub force: bool,
}

/// Runs the requested stages in dependency order. Upstream stages that are
/// not requested must already be recorded in the manifest under the same
/// config hash.
pub fn run(cfg: &PipelineConfig, stages: &[Stage], opts: RunOptions) -> Result<RunManifest> {
    let findings = validate(cfg);
    if !findings.is_empty() {
        return Err(Error::Validation(findings));
    }
    let out = cfg.out_path();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let hash = config_hash(cfg)?;
    let previous = RunManifest::load(&out)?;
    let stale = previous.as_ref().is_some_and(|m| m.config_hash != hash);
    let mut manifest = match previous {
        Some(m) if m.config_hash == hash => m,
        _ => RunManifest {
            config_hash: hash,
            artifact_version: ARTIFACT_VERSION.to_string(),
            stages: BTreeMap::new(),
        },
    };
    manifest.artifact_version = ARTIFACT_VERSION.to_string();

    let requested: BTreeSet<Stage> = stages.iter().copied().collect();
    for stage in &requested {
        for up in stage.upstream() {
            if !requested.contains(up) && !manifest.complete(*up, &out) {
                let reason = if stale {
                    "config hash mismatch against the cached run".to_string()
                } else {
                    "no cached output; include it in the requested stages".to_string()
                };
                return Err(Error::MissingUpstream {
                    stage: stage.to_string(),
                    upstream: up.to_string(),
                    reason,
                });
            }
        }
    }

    let ctx = Ctx { cfg, out: &out };
    let mut recomputed: BTreeSet<Stage> = BTreeSet::new();
    for stage in requested {
        let upstream_changed = stage.upstream().iter().any(|u| recomputed.contains(u));
        if !opts.force && !upstream_changed && manifest.complete(stage, &out) {
            log::info!("{stage}: cached");
            if let Some(r) = manifest.stages.get_mut(&stage) {
                r.cache_hit = true;
                r.seconds = 0.0;
            }
            continue;
        }
        log::info!("{stage}: running");
        let t0 = Instant::now();
        let outputs = ctx.execute(stage)?;
        manifest.stages.insert(
            stage,
            StageRecord {
                outputs,
                seconds: t0.elapsed().as_secs_f64(),
                cache_hit: false,
            },
        );
        recomputed.insert(stage);
        // Downstream records are no longer trustworthy.
        for s in Stage::ALL {
            if s > stage && depends_on(s, stage) && !stages.contains(&s) {
                manifest.stages.remove(&s);
            }
        }
        manifest.save(&out)?;
    }
    manifest.save(&out)?;
    Ok(manifest)
}

fn depends_on(stage: Stage, target: Stage) -> bool {
    stage
        .upstream()
        .iter()
        .any(|u| *u == target || depends_on(*u, target))
}

// ---------------------------------------------------------------------------
// File helpers

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let headers = rdr
            .headers()
            .map_err(|e| Error::csv(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Table { headers, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    fn f64_at(&self, row: usize, col: usize) -> Result<f64> {
        let s = &self.rows[row][col];
        s.parse()
            .map_err(|_| Error::InvalidInput(format!("`{s}` in column {} is not numeric", self.headers[col])))
    }
}

struct CsvOut {
    path: PathBuf,
    w: csv::Writer<fs::File>,
}

impl CsvOut {
    fn create(path: PathBuf, header: &[&str]) -> Result<CsvOut> {
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        w.write_record(header).map_err(|e| Error::csv(&path, e))?;
        Ok(CsvOut { path, w })
    }

    fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).map_err(|e| Error::csv(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Nearest map year; ties go to the earlier year.
pub fn nearest_year(years: &[i32], year: i32) -> Option<i32> {
    years.iter().copied().min_by_key(|y| ((y - year).abs(), *y))
}

fn map_file(allometry: Allometry, year: i32) -> String {
    format!("maps/agb_{allometry}_{year}.bin")
}

const PLOT_HEADER: [&str; 11] = [
    "plot_id",
    "x_m",
    "y_m",
    "inventory_year",
    "panel",
    "forested_fraction",
    "max_canopy_height_m",
    "agb_crm",
    "agb_nsvb",
    "partition",
    "map_year",
];

fn write_plots(path: PathBuf, rows: &[(&PlotRecord, &str)], years: &[i32]) -> Result<()> {
    let mut w = CsvOut::create(path, &PLOT_HEADER)?;
    for (p, part) in rows {
        w.row([
            p.plot_id.clone(),
            p.x.to_string(),
            p.y.to_string(),
            p.inventory_year.to_string(),
            p.panel.to_string(),
            p.forested_fraction.to_string(),
            fmt_opt(p.max_canopy_height),
            p.agb_crm.to_string(),
            p.agb_nsvb.to_string(),
            part.to_string(),
            nearest_year(years, p.inventory_year).map(|y| y.to_string()).unwrap_or_default(),
        ])?;
    }
    w.finish()
}

fn read_plots(path: &Path) -> Result<Vec<(PlotRecord, String)>> {
    let t = Table::read(path)?;
    let c: Vec<usize> = PLOT_HEADER.iter().map(|h| t.col(h)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(t.rows.len());
    for (i, r) in t.rows.iter().enumerate() {
        let int = |k: usize| -> Result<i64> {
            r[c[k]]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("`{}` is not an integer", r[c[k]])))
        };
        out.push((
            PlotRecord {
                plot_id: r[c[0]].clone(),
                x: t.f64_at(i, c[1])?,
                y: t.f64_at(i, c[2])?,
                inventory_year: int(3)? as i32,
                panel: int(4)? as u8,
                forested_fraction: t.f64_at(i, c[5])?,
                max_canopy_height: if r[c[6]].is_empty() { None } else { Some(t.f64_at(i, c[6])?) },
                agb_crm: t.f64_at(i, c[7])?,
                agb_nsvb: t.f64_at(i, c[8])?,
            },
            r[c[9]].clone(),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IngestSummary {
    n_trees: usize,
    n_plot_visits: usize,
    n_plots: usize,
    holdout_panel: u8,
    n_model_development: usize,
    n_map_assessment: usize,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExtractSummary {
    n_rows: usize,
    dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FitSummary {
    allometry: Allometry,
    n_train: usize,
    ybar_train: f64,
    report: crate::learners::EnsembleFitReport,
    meta_intercept: f64,
    meta_coefficients: Vec<f64>,
    collinear: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AssessSummary {
    allometry: Allometry,
    n_assessment_plots: usize,
    n_outside_mask: usize,
    ybar_train: f64,
    ks_d: f64,
    metrics: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AgreementRow {
    year: i32,
    n: usize,
    ac: f64,
    ac_s: f64,
    ac_u: f64,
    gmfr_a: f64,
    gmfr_b: f64,
    ks_d: f64,
    mean_crm: f64,
    mean_nsvb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GridRecord {
    name: String,
    file: String,
    summary: grid::GridSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StocksSummary {
    design_estimator: String,
    region_area_ha: f64,
    carbon_fractions: BTreeMap<String, f64>,
    stocks: StockTable,
    changes: Vec<carbon::StockChange>,
    design_minus_model: Vec<DesignModelDiff>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DesignModelDiff {
    allometry: Allometry,
    quantity: Quantity,
    label: String,
    design_mt: f64,
    model_mt: f64,
    difference_mt: f64,
}

const FEATURE_PREFIX: &str = "f_";

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    out: &'a Path,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn years(&self) -> Vec<i32> {
        self.cfg.map_years()
    }

    fn execute(&self, stage: Stage) -> Result<Vec<String>> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Extract => self.extract(),
            Stage::Fit => self.fit(),
            Stage::Predict => self.predict(),
            Stage::Assess => self.assess(),
            Stage::Agree => self.agree(),
            Stage::Diff => self.diff(),
            Stage::Stocks => self.stocks(),
            Stage::Rescale => self.rescale(),
            Stage::Report => self.report(),
        }
    }

    fn read_input_grid(&self, p: &Path) -> Result<Grid> {
        let full = self.cfg.resolve(p);
        read_grid(&full, GridFormat::from_path(&full))
    }

    fn read_out_grid(&self, rel: &str) -> Result<Grid> {
        read_grid(&self.path(rel), GridFormat::Binary)
    }

    fn ingest(&self) -> Result<Vec<String>> {
        let trees = inventory::load_trees(&self.cfg.resolve(&self.cfg.trees))?;
        let locations = inventory::load_plots(&self.cfg.resolve(&self.cfg.plots))?;
        let visits = inventory::attach_densities(&locations, &trees.records);
        let selected = inventory::select_single_inventory(&visits, self.cfg.seed);
        let part = inventory::split_by_panel(&selected, self.cfg.holdout_panel, self.cfg.seed)?;
        let dev = inventory::filter_model_dev(&part.model_development);
        let years = self.years();

        let mut rows: Vec<(&PlotRecord, &str)> = dev.records.iter().map(|p| (p, "train")).collect();
        rows.extend(part.map_assessment.iter().map(|p| (p, "assess")));
        rows.sort_by(|a, b| a.0.plot_id.cmp(&b.0.plot_id));
        write_plots(self.path("reference_plots.csv"), &rows, &years)?;
        let all: Vec<(&PlotRecord, &str)> = visits.iter().map(|p| (p, "visit")).collect();
        write_plots(self.path("plot_visits.csv"), &all, &years)?;

        let mut warnings = trees.warnings;
        warnings.extend(dev.warnings);
        write_json(
            &self.path("ingest.json"),
            &IngestSummary {
                n_trees: trees.records.len(),
                n_plot_visits: visits.len(),
                n_plots: selected.len(),
                holdout_panel: part.holdout_panel,
                n_model_development: dev.records.len(),
                n_map_assessment: part.map_assessment.len(),
                warnings,
            },
        )?;
        Ok(vec!["reference_plots.csv".into(), "plot_visits.csv".into(), "ingest.json".into()])
    }

    fn extract(&self) -> Result<Vec<String>> {
        let plots = read_plots(&self.path("reference_plots.csv"))?;
        let years = self.years();
        let mut layers: BTreeMap<i32, Vec<Grid>> = BTreeMap::new();
        for (year, paths) in &self.cfg.predictors {
            layers.insert(*year, paths.iter().map(|p| self.read_input_grid(p)).collect::<Result<_>>()?);
        }
        let features: Vec<Option<Vec<f64>>> = par::map_slice(&plots, |(p, _)| {
            let year = nearest_year(&years, p.inventory_year)?;
            let stack = &layers[&year];
            let weights = pixel_overlap_weights(&PlotFootprint::new(Point::new(p.x, p.y)), stack[0].geometry());
            stack.iter().map(|g| weighted_mean(g, &weights)).collect()
        });

        let mut header: Vec<String> = ["plot_id", "partition", "map_year", "x_m", "y_m"].map(String::from).to_vec();
        header.extend(self.cfg.predictor_names.iter().map(|n| format!("{FEATURE_PREFIX}{n}")));
        header.extend(["agb_crm".to_string(), "agb_nsvb".to_string()]);
        let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut w = CsvOut::create(self.path("extracted.csv"), &hdr)?;
        let mut dropped = Vec::new();
        let mut n_rows = 0;
        for ((p, part), f) in plots.iter().zip(&features) {
            let Some(f) = f else {
                dropped.push(format!("{} ({}): predictor footprint has no valid cells", p.plot_id, p.inventory_year));
                continue;
            };
            let year = nearest_year(&years, p.inventory_year).expect("map years present");
            let mut rec = vec![p.plot_id.clone(), part.clone(), year.to_string(), p.x.to_string(), p.y.to_string()];
            rec.extend(f.iter().map(|v| v.to_string()));
            rec.extend([p.agb_crm.to_string(), p.agb_nsvb.to_string()]);
            w.row(rec)?;
            n_rows += 1;
        }
        w.finish()?;
        write_json(&self.path("extract.json"), &ExtractSummary { n_rows, dropped })?;
        Ok(vec!["extracted.csv".into(), "extract.json".into()])
    }

    /// Training rows of `extracted.csv` as a feature matrix plus both targets.
    fn training_data(&self) -> Result<(FeatureMatrix, BTreeMap<Allometry, Vec<f64>>)> {
        let t = Table::read(&self.path("extracted.csv"))?;
        let part = t.col("partition")?;
        let fcols: Vec<usize> = self
            .cfg
            .predictor_names
            .iter()
            .map(|n| t.col(&format!("{FEATURE_PREFIX}{n}")))
            .collect::<Result<_>>()?;
        let crm = t.col("agb_crm")?;
        let nsvb = t.col("agb_nsvb")?;
        let mut rows = Vec::new();
        let mut ys: BTreeMap<Allometry, Vec<f64>> = BTreeMap::new();
        for i in 0..t.rows.len() {
            if t.rows[i][part] != "train" {
                continue;
            }
            rows.push(fcols.iter().map(|&c| t.f64_at(i, c)).collect::<Result<Vec<_>>>()?);
            ys.entry(Allometry::Crm).or_default().push(t.f64_at(i, crm)?);
            ys.entry(Allometry::Nsvb).or_default().push(t.f64_at(i, nsvb)?);
        }
        if rows.is_empty() {
            return Err(Error::Degenerate("no model development plots survived extraction".into()));
        }
        Ok((FeatureMatrix::from_rows(&rows, self.cfg.predictor_names.clone())?, ys))
    }

    fn fit(&self) -> Result<Vec<String>> {
        let (x, ys) = self.training_data()?;
        let mut outputs = Vec::new();
        for (k, allometry) in Allometry::ALL.into_iter().enumerate() {
            let y = &ys[&allometry];
            let seed = self.cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64 + 1);
            let (model, report) = EnsembleModel::fit(&self.cfg.learner_grids, &x, y, self.cfg.cv_folds, seed)?;
            let model_rel = format!("model_{allometry}.json");
            model.save(&self.path(&model_rel))?;
            let summary_rel = format!("fit_{allometry}.json");
            write_json(
                &self.path(&summary_rel),
                &FitSummary {
                    allometry,
                    n_train: y.len(),
                    ybar_train: y.iter().sum::<f64>() / y.len() as f64,
                    meta_intercept: model.meta_intercept,
                    meta_coefficients: model.meta_coefficients.clone(),
                    collinear: model.collinear,
                    report,
                },
            )?;
            outputs.extend([model_rel, summary_rel]);
        }
        Ok(outputs)
    }

    fn predict(&self) -> Result<Vec<String>> {
        let dir = self.path("maps");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut outputs = Vec::new();
        let models: Vec<(Allometry, EnsembleModel)> = Allometry::ALL
            .into_iter()
            .map(|a| Ok((a, EnsembleModel::load(&self.path(&format!("model_{a}.json")))?)))
            .collect::<Result<_>>()?;
        for (year, paths) in &self.cfg.predictors {
            let layers: Vec<Grid> = paths.iter().map(|p| self.read_input_grid(p)).collect::<Result<_>>()?;
            let refs: Vec<&Grid> = layers.iter().collect();
            let lc = self.read_input_grid(&self.cfg.landcover[year])?;
            for (allometry, model) in &models {
                let raw = predict_grid(model, &refs)?;
                let masked = grid::mask_landcover(&raw, &lc, &self.cfg.removed_classes)?;
                let rel = map_file(*allometry, *year);
                write_grid(&masked, &self.path(&rel), GridFormat::Binary)?;
                outputs.push(rel);
            }
        }
        Ok(outputs)
    }

    fn assess(&self) -> Result<Vec<String>> {
        let plots = read_plots(&self.path("reference_plots.csv"))?;
        let assess: Vec<&PlotRecord> = plots.iter().filter(|(_, part)| part == "assess").map(|(p, _)| p).collect();
        let years = self.years();
        let mut outputs = Vec::new();
        for allometry in Allometry::ALL {
            let fit: FitSummary = read_json(&self.path(&format!("fit_{allometry}.json")))?;
            let maps: BTreeMap<i32, Grid> = years
                .iter()
                .map(|y| Ok((*y, self.read_out_grid(&map_file(allometry, *y))?)))
                .collect::<Result<_>>()?;
            let preds: Vec<Option<f64>> = par::map_slice(&assess, |p| {
                let year = nearest_year(&years, p.inventory_year)?;
                let g = &maps[&year];
                weighted_mean(g, &pixel_overlap_weights(&PlotFootprint::new(Point::new(p.x, p.y)), g.geometry()))
            });
            let mut ids = Vec::new();
            let mut y = Vec::new();
            let mut yhat = Vec::new();
            let mut locations = Vec::new();
            for (p, pred) in assess.iter().zip(&preds) {
                if let Some(v) = pred {
                    ids.push(p.plot_id.clone());
                    y.push(p.agb(allometry));
                    yhat.push(*v);
                    locations.push((p.x, p.y));
                }
            }
            if y.len() < 2 {
                return Err(Error::Degenerate(format!(
                    "only {} assessment plots fall inside the mapped area",
                    y.len()
                )));
            }
            let pairs_rel = format!("assessment_pairs_{allometry}.csv");
            let mut w = CsvOut::create(self.path(&pairs_rel), &["plot_id", "x_m", "y_m", "reference", "predicted"])?;
            for i in 0..ids.len() {
                w.row([
                    ids[i].clone(),
                    locations[i].0.to_string(),
                    locations[i].1.to_string(),
                    y[i].to_string(),
                    yhat[i].to_string(),
                ])?;
            }
            w.finish()?;

            let n_inside = ids.len();
            let data = LocatedPairs::new(PairedSample::new(ids, y, yhat)?, locations)?;
            let g = maps.values().next().expect("at least one map year").geometry();
            let region = BBox::new(g.x_origin, g.y_origin, g.x_max(), g.y_max())?;
            let (metrics, aggregates) =
                agreement::multiscale_assessment(&data, region, &self.cfg.scales_km, Some(fit.ybar_train))?;

            let table_rel = format!("assessment_{allometry}.csv");
            let mut w = CsvOut::create(self.path(&table_rel), &MetricsReport::CSV_HEADER)?;
            for m in &metrics {
                w.row([
                    m.scale_label(),
                    m.n.to_string(),
                    fmt_opt(m.pph),
                    fmt_opt(m.mae),
                    fmt_opt(m.pct_mae),
                    fmt_opt(m.rmse),
                    fmt_opt(m.pct_rmse),
                    fmt_opt(m.me),
                    fmt_opt(m.r2),
                    fmt_opt(m.dr),
                ])?;
            }
            w.finish()?;

            let hex_rel = format!("hexagons_{allometry}.csv");
            let mut w = CsvOut::create(self.path(&hex_rel), &["scale_km", "hex_id", "n_members", "reference_mean", "predicted_mean"])?;
            for s in &aggregates {
                for a in &s.aggregates {
                    w.row([
                        s.scale_km.to_string(),
                        a.hex_id.to_string(),
                        a.n_members.to_string(),
                        a.y_mean.to_string(),
                        a.yhat_mean.to_string(),
                    ])?;
                }
            }
            w.finish()?;

            let ecdf_rel = format!("ecdf_{allometry}.csv");
            let mut w = CsvOut::create(self.path(&ecdf_rel), &["source", "value", "cdf"])?;
            for (source, values) in [("reference", data.pairs.y()), ("predicted", data.pairs.yhat())] {
                for (v, c) in agreement::ecdf(values)?.table() {
                    w.row([source.to_string(), v.to_string(), c.to_string()])?;
                }
            }
            w.finish()?;

            let ks_d = agreement::ks_statistic(data.pairs.y(), data.pairs.yhat())?;
            let json_rel = format!("assessment_{allometry}.json");
            write_json(
                &self.path(&json_rel),
                &AssessSummary {
                    allometry,
                    n_assessment_plots: assess.len(),
                    n_outside_mask: assess.len() - n_inside,
                    ybar_train: fit.ybar_train,
                    ks_d,
                    metrics,
                },
            )?;
            outputs.extend([pairs_rel, table_rel, hex_rel, ecdf_rel, json_rel]);
        }
        Ok(outputs)
    }

    fn agree(&self) -> Result<Vec<String>> {
        let mut rows = Vec::new();
        for year in self.years() {
            let crm = self.read_out_grid(&map_file(Allometry::Crm, year))?;
            let nsvb = self.read_out_grid(&map_file(Allometry::Nsvb, year))?;
            let mut a = Vec::new();
            let mut b = Vec::new();
            for i in 0..crm.len() {
                if let (Some(x), Some(y)) = (crm.get_index(i), nsvb.get_index(i)) {
                    a.push(x as f64);
                    b.push(y as f64);
                }
            }
            let ks_d = agreement::ks_statistic(&a, &b)?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (mean_crm, mean_nsvb) = (mean(&a), mean(&b));
            let n = a.len();
            let pairs = PairedSample::from_values(a, b)?;
            let dec = agreement::ac_decompose(&pairs)?;
            let gm = agreement::gmfr_fit(&pairs)?;
            rows.push(AgreementRow {
                year,
                n,
                ac: dec.ac,
                ac_s: dec.ac_s,
                ac_u: dec.ac_u,
                gmfr_a: gm.a,
                gmfr_b: gm.b,
                ks_d,
                mean_crm,
                mean_nsvb,
            });
        }
        let mut w = CsvOut::create(
            self.path("agreement.csv"),
            &["year", "n", "ac", "ac_s", "ac_u", "gmfr_a", "gmfr_b", "ks_d", "mean_crm", "mean_nsvb"],
        )?;
        for r in &rows {
            w.row([
                r.year.to_string(),
                r.n.to_string(),
                r.ac.to_string(),
                r.ac_s.to_string(),
                r.ac_u.to_string(),
                r.gmfr_a.to_string(),
                r.gmfr_b.to_string(),
                r.ks_d.to_string(),
                r.mean_crm.to_string(),
                r.mean_nsvb.to_string(),
            ])?;
        }
        w.finish()?;
        write_json(&self.path("agreement.json"), &rows)?;
        Ok(vec!["agreement.csv".into(), "agreement.json".into()])
    }

    fn diff(&self) -> Result<Vec<String>> {
        let dir = self.path("diff");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let years = self.years();
        let mut records: Vec<GridRecord> = Vec::new();
        let mut save = |name: String, g: &Grid| -> Result<()> {
            let rel = format!("diff/{name}.bin");
            write_grid(g, &self.path(&rel), GridFormat::Binary)?;
            records.push(GridRecord {
                name,
                file: rel,
                summary: grid::summarize(g),
            });
            Ok(())
        };
        let mut maps: BTreeMap<(Allometry, i32), Grid> = BTreeMap::new();
        for &year in &years {
            for a in Allometry::ALL {
                maps.insert((a, year), self.read_out_grid(&map_file(a, year))?);
            }
        }
        for &year in &years {
            let crm = &maps[&(Allometry::Crm, year)];
            let nsvb = &maps[&(Allometry::Nsvb, year)];
            save(format!("nsvb_minus_crm_{year}"), &grid::difference(nsvb, crm)?)?;
            let pr_c = grid::percent_rank(crm)?;
            let pr_n = grid::percent_rank(nsvb)?;
            save(format!("pct_rank_nsvb_minus_crm_{year}"), &grid::difference(&pr_n, &pr_c)?)?;
            save(format!("pct_rank_crm_{year}"), &pr_c)?;
            save(format!("pct_rank_nsvb_{year}"), &pr_n)?;
        }
        if let (Some(&first), Some(&last)) = (years.first(), years.last()) {
            if first != last {
                let mut deltas = BTreeMap::new();
                for a in Allometry::ALL {
                    let d = grid::difference(&maps[&(a, last)], &maps[&(a, first)])?;
                    save(format!("delta_{a}_{last}_{first}"), &d)?;
                    deltas.insert(a, d);
                }
                save(
                    format!("delta_nsvb_minus_delta_crm_{last}_{first}"),
                    &grid::difference(&deltas[&Allometry::Nsvb], &deltas[&Allometry::Crm])?,
                )?;
            }
        }
        let mut w = CsvOut::create(self.path("diff_summary.csv"), &["name", "file", "n_valid", "mean", "min", "max", "sum"])?;
        for r in &records {
            w.row([
                r.name.clone(),
                r.file.clone(),
                r.summary.n_valid.to_string(),
                fmt_opt(r.summary.mean),
                fmt_opt(r.summary.min),
                fmt_opt(r.summary.max),
                fmt_opt(r.summary.sum),
            ])?;
        }
        w.finish()?;
        write_json(&self.path("diff_summary.json"), &records)?;
        let mut outputs: Vec<String> = records.iter().map(|r| r.file.clone()).collect();
        outputs.extend(["diff_summary.csv".into(), "diff_summary.json".into()]);
        Ok(outputs)
    }

    fn stocks(&self) -> Result<Vec<String>> {
        let years = self.years();
        let visits = read_plots(&self.path("plot_visits.csv"))?;
        let fractions = carbon::load_carbon_fractions(&self.cfg.resolve(&self.cfg.carbon_fractions))?;
        let mut table = StockTable::default();
        let mut fraction_used = BTreeMap::new();
        let mut region_area = 0.0;
        for &year in &years {
            let nsvb_fraction = carbon::weighted_carbon_fraction(
                fractions
                    .get(&year)
                    .ok_or_else(|| Error::InvalidInput(format!("no carbon fractions for {year}")))?,
            )?;
            fraction_used.insert(format!("crm_{year}"), carbon::CRM_CARBON_FRACTION);
            fraction_used.insert(format!("nsvb_{year}"), nsvb_fraction);
            let frac = |a: Allometry| match a {
                Allometry::Crm => carbon::CRM_CARBON_FRACTION,
                Allometry::Nsvb => nsvb_fraction,
            };

            // One visit per plot: the one nearest this map year.
            let mut nearest: BTreeMap<&str, &PlotRecord> = BTreeMap::new();
            for (p, _) in &visits {
                if nearest_year(&years, p.inventory_year) != Some(year) {
                    continue;
                }
                let e = nearest.entry(p.plot_id.as_str()).or_insert(p);
                if ((p.inventory_year - year).abs(), p.inventory_year) < ((e.inventory_year - year).abs(), e.inventory_year) {
                    *e = p;
                }
            }
            let design_plots: Vec<PlotRecord> = nearest.into_values().cloned().collect();

            for a in Allometry::ALL {
                let map = self.read_out_grid(&map_file(a, year))?;
                let area = self.cfg.region_area_ha.unwrap_or_else(|| map.geometry().extent_area_ha());
                region_area = area;
                let mut bases = vec![AreaBasis::AllCells, AreaBasis::ValidCells];
                if let Some(area_ha) = self.cfg.region_area_ha {
                    bases.push(AreaBasis::Region { area_ha });
                }
                let mut estimates: Vec<StockEstimate> = Vec::new();
                if !design_plots.is_empty() {
                    estimates.push(carbon::design_stock(&design_plots, a, year, area)?);
                }
                for basis in bases {
                    estimates.push(carbon::model_stock(&map, year, a, basis)?);
                }
                for s in estimates {
                    let agc = carbon::agb_to_agc(&s, frac(a))?;
                    table.push(s);
                    table.push(agc);
                }
            }
        }
        table.write_csv(&self.path("stocks.csv"))?;

        let mut changes = Vec::new();
        if let (Some(&first), Some(&last)) = (years.first(), years.last()) {
            if first != last {
                changes = carbon::stock_changes(&table, first, last)?;
            }
        }
        let mut w = CsvOut::create(
            self.path("stock_changes.csv"),
            &["method", "allometry", "quantity", "area_basis", "from_year", "to_year", "delta_mt"],
        )?;
        for c in &changes {
            w.row([
                c.method.as_str().to_string(),
                c.allometry.to_string(),
                c.quantity.as_str().to_string(),
                c.area_basis.clone(),
                c.from_year.to_string(),
                c.to_year.to_string(),
                c.delta_mt.to_string(),
            ])?;
        }
        w.finish()?;

        // Design minus model, per year and for the change, against the model
        // estimate expanded over the same area as the design estimate.
        let model_basis = if self.cfg.region_area_ha.is_some() { "region" } else { "all_cells" };
        let mut diffs = Vec::new();
        for a in Allometry::ALL {
            for q in [Quantity::Agb, Quantity::Agc] {
                for &year in &years {
                    if let (Some(d), Some(m)) = (
                        table.find(Method::Design, a, year, q, "region"),
                        table.find(Method::Model, a, year, q, model_basis),
                    ) {
                        diffs.push(DesignModelDiff {
                            allometry: a,
                            quantity: q,
                            label: year.to_string(),
                            design_mt: d.total_mt,
                            model_mt: m.total_mt,
                            difference_mt: d.total_mt - m.total_mt,
                        });
                    }
                }
                let find = |method: Method, basis: &str| {
                    changes
                        .iter()
                        .find(|c| c.method == method && c.allometry == a && c.quantity == q && c.area_basis == basis)
                };
                if let (Some(d), Some(m)) = (find(Method::Design, "region"), find(Method::Model, model_basis)) {
                    diffs.push(DesignModelDiff {
                        allometry: a,
                        quantity: q,
                        label: "delta".into(),
                        design_mt: d.delta_mt,
                        model_mt: m.delta_mt,
                        difference_mt: d.delta_mt - m.delta_mt,
                    });
                }
            }
        }
        let mut w = CsvOut::create(
            self.path("stock_design_minus_model.csv"),
            &["allometry", "quantity", "year", "design_mt", "model_mt", "design_minus_model_mt"],
        )?;
        for d in &diffs {
            w.row([
                d.allometry.to_string(),
                d.quantity.as_str().to_string(),
                d.label.clone(),
                d.design_mt.to_string(),
                d.model_mt.to_string(),
                d.difference_mt.to_string(),
            ])?;
        }
        w.finish()?;

        write_json(
            &self.path("stocks.json"),
            &StocksSummary {
                design_estimator: "simple expansion (mean plot density x region area); not a post-stratified estimator".into(),
                region_area_ha: region_area,
                carbon_fractions: fraction_used,
                stocks: table,
                changes,
                design_minus_model: diffs,
            },
        )?;
        Ok(vec![
            "stocks.csv".into(),
            "stock_changes.csv".into(),
            "stock_design_minus_model.csv".into(),
            "stocks.json".into(),
        ])
    }

    fn rescale(&self) -> Result<Vec<String>> {
        let year = *self.years().last().ok_or_else(|| Error::InvalidInput("no map years".into()))?;
        let nsvb = self.read_out_grid(&map_file(Allometry::Nsvb, year))?;
        let crm = self.read_out_grid(&map_file(Allometry::Crm, year))?;
        let elev = self.read_input_grid(&self.cfg.elevation)?;
        let fit = carbon::rescale_fit(
            &nsvb,
            &crm,
            &elev,
            self.cfg.rescale.n_sample,
            self.cfg.rescale.train_frac,
            self.cfg.seed,
        )?;
        let mut w = CsvOut::create(
            self.path("rescale.csv"),
            &["year", "beta0", "beta1", "beta2", "test_rmse", "test_mae", "test_me", "test_r2", "n_train", "n_test"],
        )?;
        w.row([
            year.to_string(),
            fit.beta0.to_string(),
            fit.beta1.to_string(),
            fit.beta2.to_string(),
            fmt_opt(fit.test_rmse),
            fmt_opt(fit.test_mae),
            fmt_opt(fit.test_me),
            fmt_opt(fit.test_r2),
            fit.n_train.to_string(),
            fit.n_test.to_string(),
        ])?;
        w.finish()?;
        write_json(&self.path("rescale.json"), &serde_json::json!({ "year": year, "fit": fit }))?;
        Ok(vec!["rescale.csv".into(), "rescale.json".into()])
    }

    fn report(&self) -> Result<Vec<String>> {
        let dir = self.path("report");
        let display = dir.join("display");
        fs::create_dir_all(&display).map_err(|e| Error::io(&display, e))?;
        let mut outputs = Vec::new();
        let mut md = String::from("# AGB mapping run report\n\n");
        md.push_str(&format!("Artifact version {ARTIFACT_VERSION}.\n\n"));

        for a in Allometry::ALL {
            let s: AssessSummary = read_json(&self.path(&format!("assessment_{a}.json")))?;
            md.push_str(&format!(
                "## Map accuracy ({a})\n\n{} assessment plots ({} outside the mapped area). Training mean {:.2} Mg/ha. KS D = {:.3}.\n\n",
                s.n_assessment_plots, s.n_outside_mask, s.ybar_train, s.ks_d
            ));
            md.push_str("| Scale | n | PPH | MAE | %MAE | RMSE | %RMSE | ME | R2 | d_r |\n");
            md.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
            let f2 = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
            for m in &s.metrics {
                md.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                    m.scale_label(),
                    m.n,
                    f2(m.pph),
                    f2(m.mae),
                    f2(m.pct_mae),
                    f2(m.rmse),
                    f2(m.pct_rmse),
                    f2(m.me),
                    f2(m.r2),
                    f2(m.dr)
                ));
            }
            md.push('\n');
        }

        let agree: Vec<AgreementRow> = read_json(&self.path("agreement.json"))?;
        md.push_str("## CRM vs NSVB map agreement\n\n| Year | n | AC | ACs | ACu | KS D |\n|---|---|---|---|---|---|\n");
        for r in &agree {
            md.push_str(&format!(
                "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
                r.year, r.n, r.ac, r.ac_s, r.ac_u, r.ks_d
            ));
        }
        md.push('\n');

        let stocks: StocksSummary = read_json(&self.path("stocks.json"))?;
        md.push_str(&format!(
            "## Stocks (Mt)\n\nDesign-based totals use a {}. Region area {:.1} ha.\n\n",
            stocks.design_estimator, stocks.region_area_ha
        ));
        md.push_str("| Quantity | Year | CRM design | CRM model | CRM design - model | NSVB design | NSVB model | NSVB design - model |\n");
        md.push_str("|---|---|---|---|---|---|---|---|\n");
        let mut labels: Vec<String> = self.years().iter().map(|y| y.to_string()).collect();
        labels.push("delta".into());
        for q in [Quantity::Agb, Quantity::Agc] {
            for label in &labels {
                let cell = |a: Allometry| {
                    stocks
                        .design_minus_model
                        .iter()
                        .find(|d| d.allometry == a && d.quantity == q && &d.label == label)
                        .map(|d| format!("{:.2} | {:.2} | {:.2}", d.design_mt, d.model_mt, d.difference_mt))
                        .unwrap_or_else(|| " | | ".into())
                };
                md.push_str(&format!(
                    "| {} | {} | {} | {} |\n",
                    q.as_str().to_uppercase(),
                    label,
                    cell(Allometry::Crm),
                    cell(Allometry::Nsvb)
                ));
            }
        }
        md.push('\n');

        let rescale: serde_json::Value = read_json(&self.path("rescale.json"))?;
        let fit: carbon::RescaleFit = serde_json::from_value(rescale["fit"].clone())?;
        md.push_str(&format!(
            "## CRM to NSVB rescaling\n\nNSVB = {:.3} + {:.3} CRM + {:.4} elevation (n_train {}, n_test {}); test RMSE {}, R2 {}.\n\n",
            fit.beta0,
            fit.beta1,
            fit.beta2,
            fit.n_train,
            fit.n_test,
            fit.test_rmse.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into()),
            fit.test_r2.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into()),
        ));

        // Display copies of difference maps, capped for visualisation.
        let records: Vec<GridRecord> = read_json(&self.path("diff_summary.json"))?;
        md.push_str(&format!("## Difference maps\n\nDisplay copies capped at +/-{DISPLAY_CAP} in `report/display/`.\n\n"));
        for r in records.iter().filter(|r| !r.name.starts_with("pct_rank_crm") && !r.name.starts_with("pct_rank_nsvb_2")) {
            let g = self.read_out_grid(&r.file)?;
            let capped = grid::cap(&g, DISPLAY_CAP)?;
            let rel = format!("report/display/{}.asc", r.name);
            grid::write_ascii(
                &capped,
                &self.path(&rel),
                AsciiOptions {
                    precision: Some(6),
                    ..AsciiOptions::default()
                },
            )?;
            md.push_str(&format!(
                "- `{}`: mean {}\n",
                r.name,
                r.summary.mean.map(|m| format!("{m:.3}")).unwrap_or_else(|| "n/a".into())
            ));
            outputs.push(rel);
        }

        let md_path = self.path("report/report.md");
        fs::write(&md_path, md).map_err(|e| Error::io(&md_path, e))?;
        outputs.push("report/report.md".into());
        Ok(outputs)
    }
}

/// Geometry shared by all configured layers (that of the elevation grid).
pub fn reference_geometry(cfg: &PipelineConfig) -> Result<GridGeometry> {
    let p = cfg.resolve(&cfg.elevation);
    Ok(*read_grid(&p, GridFormat::from_path(&p))?.geometry())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_lists_parse() {
        assert_eq!(Stage::parse_list("fit, ingest").unwrap(), vec![Stage::Ingest, Stage::Fit]);
        assert_eq!(Stage::parse_list("all").unwrap().len(), 9);
        assert!(Stage::parse_list("bogus").is_err());
        assert!(Stage::parse_list("").is_err());
    }

    #[test]
    fn upstream_closure() {
        assert!(depends_on(Stage::Report, Stage::Ingest));
        assert!(depends_on(Stage::Assess, Stage::Extract));
        assert!(!depends_on(Stage::Ingest, Stage::Fit));
        for s in Stage::ALL {
            assert!(s.upstream().iter().all(|u| *u < s));
        }
    }

    #[test]
    fn nearest_year_prefers_earlier_on_ties() {
        assert_eq!(nearest_year(&[2005, 2019], 2012), Some(2005));
        assert_eq!(nearest_year(&[2005, 2019], 2013), Some(2019));
        assert_eq!(nearest_year(&[], 2013), None);
    }

    #[test]
    fn seed_is_mandatory() {
        let mut v = serde_json::to_value(PipelineConfig::template()).unwrap();
        v.as_object_mut().unwrap().remove("seed");
        assert!(serde_json::from_value::<PipelineConfig>(v).is_err());
    }

    #[test]
    fn validation_reports_missing_files_and_bad_classes() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::template();
        cfg.base_dir = dir.path().to_path_buf();
        cfg.trees = "nope.csv".into();
        cfg.removed_classes = [1, 12].into();
        let f = validate(&cfg);
        assert!(f.iter().any(|x| x.kind == FindingKind::MissingFile && x.subject == "nope.csv"));
        assert!(f.iter().any(|x| x.kind == FindingKind::ClassCode));
        assert!(f.iter().any(|x| x.to_string().starts_with("missing file")));
    }

    #[test]
    fn hash_ignores_output_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "x").unwrap();
        let mut cfg = PipelineConfig::template();
        cfg.base_dir = dir.path().to_path_buf();
        cfg.trees = "a.csv".into();
        cfg.plots = "a.csv".into();
        cfg.elevation = "a.csv".into();
        cfg.carbon_fractions = "a.csv".into();
        let h1 = config_hash(&cfg).unwrap();
        cfg.out_dir = "elsewhere".into();
        assert_eq!(config_hash(&cfg).unwrap(), h1);
        cfg.seed = 9;
        assert_ne!(config_hash(&cfg).unwrap(), h1);
        fs::write(dir.path().join("a.csv"), "y").unwrap();
        cfg.seed = 0;
        assert_ne!(config_hash(&cfg).unwrap(), h1);
    }
}
