use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use pdmc_cli::config::ExperimentConfig;
use pdmc_cli::{runner, validate};

#[derive(Parser)]
#[command(name = "pdmc", version, about = "Piecewise deterministic Monte Carlo on polytopes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured sampler and write trajectories and diagnostics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `out` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Check rates, kernels and rate bounds for the configured model.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<bool> {
    match command {
        Command::Run { config, out, seed, runs } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(runs) = runs {
                cfg.runs = runs;
            }
            cfg.check()?;
            let out = out
                .or_else(|| cfg.out.clone())
                .context("no output directory: pass --out or set `out` in the config")?;
            let summary = runner::run(&cfg, &out)?;
            for row in &summary.rows {
                log::info!(
                    "{} {} estimate {:.5} ess/epoch {:.4}",
                    row.run_id,
                    row.function,
                    row.estimate,
                    row.ess_per_epoch
                );
            }
            let violations = summary.total_violations();
            if violations > 0 {
                eprintln!("{violations} emitted positions violate the constraints");
                return Ok(false);
            }
            println!("wrote {} runs to {}", summary.manifest.runs.len(), out.display());
            Ok(true)
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = validate::validate(&cfg)?;
            print!("{report}");
            Ok(report.passed())
        }
    }
}
