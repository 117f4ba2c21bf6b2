//! Command line driver: synthetic data, training, prediction with ensemble
//! uncertainty, condition sweeps, multicycle runs and gradient checks.

pub mod commands;
pub mod config;
pub mod error;
pub mod hull;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::Context;
use crate::config::{ConditionConfig, Profile, RunConfig};
pub use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "icvi",
    version,
    about = "Hybrid physics/neural CVI densification"
)]
pub struct Cli {
    /// TOML run configuration laid over the profile defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Measurements CSV.
    #[arg(long, global = true, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    /// Ensemble checkpoint to write (train) or read.
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "fast")]
    pub profile: Profile,
    /// Overrides the master and noise seeds.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate noisy and clean measurements from the truth model.
    Synth,
    /// Train the ensemble on a dataset.
    Train,
    /// Ensemble prediction with uncertainty for one or more conditions.
    Predict(PredictArgs),
    /// Uncertainty band widths over a temperature/pressure grid.
    Sweep,
    /// Multicycle schedule with machining between cycles.
    Multicycle,
    /// Compare adjoint gradients with finite differences on a small problem.
    Gradcheck {
        #[arg(long, hide = true)]
        corrupt_adjoint: bool,
    },
}

/// A single condition from flags; falls back to the `predict` list in the config.
#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "K")]
    pub temperature: Option<f64>,
    #[arg(long, value_name = "PA")]
    pub total_pressure: Option<f64>,
    /// Defaults to the total pressure.
    #[arg(long, value_name = "PA")]
    pub partial_pressure: Option<f64>,
    #[arg(long, value_name = "H", default_value_t = 350.0)]
    pub duration_h: f64,
    #[arg(long, value_name = "H", default_value_t = 35.0)]
    pub observe_every_h: f64,
    #[arg(long)]
    pub id: Option<String>,
}

impl PredictArgs {
    fn conditions(&self, cfg: &RunConfig) -> Result<Vec<ConditionConfig>> {
        match (self.temperature, self.total_pressure) {
            (Some(t), Some(p)) => Ok(vec![ConditionConfig {
                id: self.id.clone(),
                temperature_K: t,
                total_pressure_Pa: p,
                partial_pressure_Pa: self.partial_pressure,
                duration_h: self.duration_h,
                observe_every_h: self.observe_every_h,
            }]),
            (None, None) => Ok(cfg.predict.clone().unwrap_or_default()),
            (None, _) => Err(CliError::MissingFlag("temperature")),
            (_, None) => Err(CliError::MissingFlag("total-pressure")),
        }
    }
}

fn context(cli: &Cli) -> Result<Context> {
    let (mut cfg, config_bytes) = match &cli.config {
        Some(p) => RunConfig::load(p, cli.profile)?,
        None => (RunConfig::defaults(cli.profile), Vec::new()),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds.master = seed;
        cfg.seeds.noise = seed;
    }
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    Ok(Context {
        cfg,
        config_bytes,
        out,
        dataset: cli.dataset.clone(),
        checkpoint: cli.checkpoint.clone(),
    })
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = context(cli)?;
    match &cli.command {
        Command::Synth => commands::synth(&ctx).map(drop),
        Command::Train => commands::train(&ctx).map(drop),
        Command::Predict(args) => {
            let conds = args.conditions(&ctx.cfg)?;
            if args.temperature.is_some() {
                config::check_condition(&conds[0], "/predict/0", ctx.cfg.solver.dt_h)?;
            }
            commands::predict(&ctx, &conds).map(drop)
        }
        Command::Sweep => commands::sweep(&ctx).map(drop),
        Command::Multicycle => commands::multicycle(&ctx).map(drop),
        Command::Gradcheck { corrupt_adjoint } => {
            commands::gradcheck(&ctx, *corrupt_adjoint).map(drop)
        }
    }
}

/// Parses `args` (program name first) and runs; for embedding and tests.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Config {
        pointer: "/".into(),
        msg: e.to_string(),
    })?;
    run(&cli)
}
