//! `agbmap`: command-line driver for the AGB mapping and accounting pipeline.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use agb_core::pipeline::{self, PipelineConfig, RunManifest, RunOptions, Stage};
use agb_core::synth::{self, SynthConfig};
use agb_core::Error;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "agbmap", version, about = "Forest aboveground biomass mapping, assessment and carbon accounting")]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (for `synth`, the dataset directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Recompute stages even when cached outputs are valid.
    #[arg(long, global = true)]
    force: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset and its config.
    Synth {
        #[arg(long, default_value_t = 200)]
        ncols: usize,
        #[arg(long, default_value_t = 200)]
        nrows: usize,
        /// Cell size in metres.
        #[arg(long, default_value_t = 1000.0)]
        cellsize: f64,
        #[arg(long, default_value_t = 300)]
        plots: usize,
    },
    /// Load inventory data, select one visit per plot and split by panel.
    Ingest,
    /// Extract footprint-weighted predictor values at plots.
    Extract,
    /// Fit the stacked ensembles.
    Fit,
    /// Predict and landcover-mask AGB maps.
    Predict,
    /// Multi-scale map accuracy assessment.
    Assess,
    /// CRM vs NSVB map agreement.
    Agree,
    /// Difference and percent-rank maps.
    Diff,
    /// Stock, stock-change and carbon tables.
    Stocks,
    /// CRM to NSVB rescaling regression.
    Rescale,
    /// Summarise outputs into report/report.md.
    Report,
    /// Run several stages (default: all analysis stages plus the report).
    Run {
        /// Comma-separated stage list, or `all`.
        #[arg(long)]
        stages: Option<String>,
    },
    /// Check the configuration and print findings.
    Validate,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(findings) => Failure::Validation(
                findings.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("\n"),
            ),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::load(&cli.config)
        .map_err(|e| Failure::Validation(format!("cannot load {}: {e}", cli.config.display())))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = std::env::current_dir()
            .map(|d| d.join(out))
            .unwrap_or_else(|_| out.clone());
    }
    Ok(cfg)
}

fn print_manifest(m: &RunManifest, requested: &[Stage]) {
    for s in requested {
        if let Some(r) = m.stages.get(s) {
            if r.cache_hit {
                println!("{s:<8} cached ({} outputs)", r.outputs.len());
            } else {
                println!("{s:<8} done in {:.2}s ({} outputs)", r.seconds, r.outputs.len());
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let stages: Vec<Stage> = match &cli.command {
        Command::Synth {
            ncols,
            nrows,
            cellsize,
            plots,
        } => {
            let mut cfg = SynthConfig {
                ncols: *ncols,
                nrows: *nrows,
                cellsize: *cellsize,
                n_plots: *plots,
                ..SynthConfig::default()
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
            let path = synth::write_dataset(&cfg, &dir)?;
            println!("wrote synthetic dataset; config at {}", path.display());
            return Ok(());
        }
        Command::Validate => {
            let cfg = load_config(cli)?;
            let findings = pipeline::validate(&cfg);
            if findings.is_empty() {
                println!("config is valid");
                return Ok(());
            }
            for f in &findings {
                println!("{f}");
            }
            return Err(Failure::Validation(format!("{} finding(s)", findings.len())));
        }
        Command::Run { stages } => match stages {
            Some(list) => Stage::parse_list(list).map_err(|e| Failure::Validation(e.to_string()))?,
            None => Stage::ALL.to_vec(),
        },
        Command::Ingest => vec![Stage::Ingest],
        Command::Extract => vec![Stage::Extract],
        Command::Fit => vec![Stage::Fit],
        Command::Predict => vec![Stage::Predict],
        Command::Assess => vec![Stage::Assess],
        Command::Agree => vec![Stage::Agree],
        Command::Diff => vec![Stage::Diff],
        Command::Stocks => vec![Stage::Stocks],
        Command::Rescale => vec![Stage::Rescale],
        Command::Report => vec![Stage::Report],
    };
    let cfg = load_config(cli)?;
    let manifest = pipeline::run(&cfg, &stages, RunOptions { force: cli.force })?;
    print_manifest(&manifest, &stages);
    println!("outputs in {}", cfg.out_path().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("validation failed:\n{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
