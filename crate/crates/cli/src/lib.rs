//! Command-line pipeline: ingest, generate, train, infer, ensemble, gravity
//! and compare, each writing its outputs plus a run manifest.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use tradecost::ErrorClass;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    /// A result check requested in the configuration failed.
    #[error("check failed: {0}")]
    Check(String),

    #[error(transparent)]
    Core(#[from] tradecost::Error),
}

impl CliError {
    /// 1 configuration, 2 input/output, 3 numerical or check failure,
    /// 4 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Check(_) => 3,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 1,
                ErrorClass::Io => 2,
                ErrorClass::Numeric => 3,
                ErrorClass::NonConvergence => 4,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tradecost", version, about = "Infer trade costs from bilateral flow data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Entropic regularization strength.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,

    /// Worker threads (0 = all cores); never changes results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Parse trade files into a panel directory.
    Ingest {
        #[arg(long)]
        trade: Vec<PathBuf>,
    },
    /// Write a synthetic panel with its generating costs.
    Generate,
    /// Train the inverse network on a panel.
    Train {
        #[arg(long)]
        panel: Option<PathBuf>,
    },
    /// Infer costs and flow estimates with a trained network.
    Infer {
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Propagate reporting discrepancies into cost and flow bands.
    Ensemble {
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Fit the gravity baseline.
    Gravity {
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        covariates: Option<PathBuf>,
    },
    /// Compare OT and gravity flow estimates against the panel.
    Compare {
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        ot: Option<PathBuf>,
        #[arg(long)]
        gravity: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Generate => "generate",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Ensemble { .. } => "ensemble",
            Command::Gravity { .. } => "gravity",
            Command::Compare { .. } => "compare",
        }
    }

    /// Moves path flags into the configuration.
    fn apply(&self, cfg: &mut RunConfig) {
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        let p = &mut cfg.paths;
        match self {
            Command::Ingest { trade } => {
                if !trade.is_empty() {
                    p.trade.clone_from(trade);
                }
            }
            Command::Generate => {}
            Command::Train { panel } => set(&mut p.panel, panel),
            Command::Infer { panel, model } | Command::Ensemble { panel, model } => {
                set(&mut p.panel, panel);
                set(&mut p.model, model);
            }
            Command::Gravity { panel, covariates } => {
                set(&mut p.panel, panel);
                set(&mut p.covariates, covariates);
            }
            Command::Compare { panel, ot, gravity } => {
                set(&mut p.panel, panel);
                set(&mut p.ot_plans, ot);
                set(&mut p.gravity_plans, gravity);
            }
        }
    }
}

/// Resolves the configuration from the file and flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = cli.epsilon {
        cfg.epsilon = e;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if cli.out.is_some() {
        cfg.out.clone_from(&cli.out);
    }
    cli.command.apply(&mut cfg);
    cfg.resolve()
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Config("no output directory (--out)".into()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let started = Instant::now();
    std::fs::create_dir_all(&out).map_err(|e| tradecost::Error::io(&out, e))?;
    pool.install(|| commands::dispatch(&cli.command, &cfg, &out))?;
    let elapsed = started.elapsed().as_secs_f64();
    manifest::finish(cli.command.name(), &cfg, &out, elapsed)?;
    log::info!("{} finished in {elapsed:.3} s", cli.command.name());
    Ok(())
}
