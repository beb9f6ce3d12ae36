//! Command-line front end for cost-aware active learning experiments.

use clap::{Parser, Subcommand};
use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use weakgp_core::experiment::{
    aggregate_dir, build_dataset, parse_config, run_experiment, serialize_config,
};
use weakgp_core::oracles::dump_split;

#[derive(Parser)]
#[command(
    name = "weakgp",
    version,
    about = "Cost-aware active learning for Gaussian processes with weak annotations"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every strategy x repeat of a config and aggregate the results.
    Run {
        /// Experiment config (INI format).
        config: PathBuf,
        /// Output directory (default: $WEAKGP_OUT_DIR/<config stem>, else
        /// ./weakgp_out/<config stem>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Aggregate traj_*.csv files in a directory into quartile curves.
    Aggregate {
        /// Directory holding trajectory CSVs.
        dir: PathBuf,
        /// Number of cost-grid points.
        #[arg(long, default_value_t = 100)]
        grid: usize,
    },
    /// Generate one dataset split from a config and dump it as CSV.
    GenData {
        /// Experiment config describing the dataset.
        spec: PathBuf,
        /// Destination CSV file.
        #[arg(long)]
        out: PathBuf,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parse a config and print its fully resolved form.
    Validate {
        /// Experiment config to check.
        config: PathBuf,
    },
}

fn resolve_out_dir(explicit: Option<PathBuf>, config: &Path) -> PathBuf {
    if let Some(dir) = explicit {
        return dir;
    }
    let stem = config
        .file_stem()
        .map(|s| s.to_os_string())
        .unwrap_or_else(|| "experiment".into());
    let base = std::env::var_os("WEAKGP_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("weakgp_out"));
    base.join(stem)
}

fn real_main(cli: Cli) -> Result<(), Box<dyn Error>> {
    match cli.cmd {
        Cmd::Run {
            config,
            out,
            workers,
        } => {
            let cfg = parse_config(&config)?;
            let out_dir = resolve_out_dir(out, &config);
            run_experiment(&cfg, &out_dir, workers)?;
            println!(
                "wrote {} trajectories and {} aggregates to {}",
                cfg.strategies.len() * cfg.repeats,
                cfg.strategies.len(),
                out_dir.display()
            );
        }
        Cmd::Aggregate { dir, grid } => {
            let curves = aggregate_dir(&dir, grid)?;
            for curve in &curves {
                println!("{}: {} grid points", curve.strategy, curve.costs.len());
            }
        }
        Cmd::GenData { spec, out, seed } => {
            let cfg = parse_config(&spec)?;
            let (split, _) = build_dataset(&cfg, seed)?;
            dump_split(&split, &out)?;
            println!(
                "wrote {} pool + {} test points to {}",
                split.n_pool(),
                split.n_test(),
                out.display()
            );
        }
        Cmd::Validate { config } => {
            let cfg = parse_config(&config)?;
            print!("{}", serialize_config(&cfg));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
