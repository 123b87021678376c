use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlkg_core::data::InitialData;
use nlkg_lab::commands;
use nlkg_lab::config::ExperimentConfig;

/// Radial Klein-Gordon laboratory.
///
/// Settings come from the TOML file given with `--config`; `--set key=value`
/// overrides any key (dotted paths address nested tables) and the dedicated
/// flags override both. Relative output paths resolve against $NLKG_LAB_OUT.
#[derive(Parser)]
#[command(name = "nlkg-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a configuration key, e.g. `--set evolve.dt=0.002`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `output`).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the ground state and threshold m.
    Groundstate(Common),
    /// Classify the configured initial data.
    Classify {
        #[command(flatten)]
        common: Common,
        /// Classify a state read from a CSV with columns r,u,v instead.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Classify, then evolve the configured initial data.
    Evolve(Common),
    /// Run every point of the configured sweep.
    Sweep(Common),
    /// Audit the nonlinearity assumptions and the stored ground state.
    Audit(Common),
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config, &common.overrides)?;
    if let Some(out) = &common.output {
        cfg.output = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Groundstate(c) => {
            commands::groundstate(&load(&c)?)?;
        }
        Command::Classify { common, state } => {
            let mut cfg = load(&common)?;
            if let Some(path) = state {
                cfg.data = InitialData::Csv { path };
            }
            commands::classify_cmd(&cfg)?;
        }
        Command::Evolve(c) => {
            commands::evolve_cmd(&load(&c)?)?;
        }
        Command::Sweep(c) => {
            let points = commands::sweep_cmd(&load(&c)?)?;
            if points.iter().any(|p| p.error.is_some()) {
                eprintln!("some sweep points failed; see the error column of the summary");
            }
        }
        Command::Audit(c) => {
            if !commands::audit_cmd(&load(&c)?)? {
                return Ok(4);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(nlkg_lab::exit_code(&e))
        }
    }
}
