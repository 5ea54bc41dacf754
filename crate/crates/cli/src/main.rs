//! `arlab`: command-line experiments for capture into autoresonance.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use commands::{Figure, FiguresConfig};
use config::OutDir;
use error::CliError;

#[derive(Parser)]
#[command(name = "arlab", version, about = "Autoresonance capture experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Asymptotic series coefficients and residuals.
    Series(Common),
    /// One trajectory, deterministic or stochastic.
    Simulate(Common),
    /// Monte Carlo ensemble of the perturbed system.
    Ensemble(Common),
    /// Exit-time scaling across noise amplitudes.
    ExitTimes(Common),
    /// Numerical Lyapunov certificate.
    Certify(Common),
    /// Closed-form thresholds for the noise theorems.
    Thresholds(Common),
    /// Pendulum run compared with the averaged envelope.
    Pendulum(Common),
    /// Data for the phase-portrait (fig1) and noisy-capture (fig2) plots.
    Figures {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        which: Option<Figure>,
    },
}

fn load<T: DeserializeOwned>(c: &Common, name: &str) -> Result<T, CliError> {
    let path = c
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("`{name}` needs --config <path>")))?;
    config::load(path, name)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Series(c) => {
            let cfg: commands::SeriesConfig = load(&c, "series")?;
            let mut out = OutDir::create(&c.out)?;
            commands::series(&cfg, &mut out)?;
            out.finish("series", c.threads, &cfg)
        }
        Command::Simulate(c) => {
            let mut cfg: commands::SimulateConfig = load(&c, "simulate")?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            let mut out = OutDir::create(&c.out)?;
            commands::simulate(&cfg, &mut out)?;
            out.finish("simulate", c.threads, &cfg)
        }
        Command::Ensemble(c) => {
            let mut cfg: autores::ensemble::EnsembleConfig = load(&c, "ensemble")?;
            if let Some(s) = c.seed {
                cfg.master_seed = s;
            }
            let mut out = OutDir::create(&c.out)?;
            commands::ensemble(&cfg, c.threads, &mut out)?;
            out.finish("ensemble", c.threads, &cfg)
        }
        Command::ExitTimes(c) => {
            let mut cfg: commands::ExitTimesConfig = load(&c, "exit-times")?;
            if let Some(s) = c.seed {
                cfg.ensemble.master_seed = s;
            }
            let mut out = OutDir::create(&c.out)?;
            commands::exit_times(&cfg, c.threads, &mut out)?;
            out.finish("exit-times", c.threads, &cfg)
        }
        Command::Certify(c) => {
            let mut cfg: commands::CertifyRun = load(&c, "certify")?;
            if let Some(s) = c.seed {
                cfg.certify.seed = s;
            }
            let mut out = OutDir::create(&c.out)?;
            commands::certify_cmd(&cfg, c.threads, &mut out)?;
            out.finish("certify", c.threads, &cfg)
        }
        Command::Thresholds(c) => {
            let cfg: commands::ThresholdsConfig = load(&c, "thresholds")?;
            let mut out = OutDir::create(&c.out)?;
            commands::thresholds_cmd(&cfg, &mut out)?;
            out.finish("thresholds", c.threads, &cfg)
        }
        Command::Pendulum(c) => {
            let cfg: commands::PendulumRun = load(&c, "pendulum")?;
            let mut out = OutDir::create(&c.out)?;
            commands::pendulum(&cfg, &mut out)?;
            out.finish("pendulum", c.threads, &cfg)
        }
        Command::Figures { common: c, which } => {
            let mut cfg: FiguresConfig = match (&c.config, which) {
                (Some(_), _) => load(&c, "figures")?,
                (None, Some(w)) => serde_json::from_value(serde_json::json!({ "which": w }))
                    .map_err(|e| CliError::Config(e.to_string()))?,
                (None, None) => return Err(CliError::Config("`figures` needs --which fig1|fig2 or --config".into())),
            };
            if let Some(w) = which {
                cfg.which = w;
            }
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            let mut out = OutDir::create(&c.out)?;
            commands::figures(&cfg, &mut out)?;
            out.finish("figures", c.threads, &cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("arlab: {e}");
            e.exit_code()
        }
    }
}
