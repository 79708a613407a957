//! `fbsde`: run estimator sweeps, export oracles, build heatmaps.
//!
//! Exit codes: 0 success, 1 invalid configuration or arguments, 2 I/O or
//! schema errors, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use taylor_fbsde::config::ExperimentConfig;
use taylor_fbsde::{experiment, heatmap, Error};

#[derive(Parser)]
#[command(name = "fbsde", version, about = "Taylor-expanded FBSDE value estimation experiments")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the estimator sweep and write results.csv and manifest.json.
    Run {
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a results.csv into per-estimator basis-by-samples matrices.
    Heatmap {
        results: PathBuf,
        /// Defaults to the directory of `results`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the ground-truth value function and confidence regions.
    Oracle {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimator bias/variance at pinned states and the bias-bound check.
    Diagnose {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config { .. } | Error::InvalidArgument(_) => 1,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Schema(_) => 2,
        _ => 3,
    }
}

fn load(config: &Path, out: Option<PathBuf>) -> taylor_fbsde::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> taylor_fbsde::Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load(&config, out)?;
            let output = experiment::run_experiment(&cfg)?;
            let diverged = output.rows.iter().filter(|r| !r.mean_rae.is_finite()).count();
            println!("{} cells, {} diverged", output.rows.len(), diverged);
            let mut written = vec![output.results, output.manifest];
            written.extend(output.policy_iteration);
            report(&written);
        }
        Command::Heatmap { results, out } => {
            let dir = out.unwrap_or_else(|| {
                results
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            report(&heatmap::emit_heatmap(&results, &dir)?);
        }
        Command::Oracle { config, out } => {
            let cfg = load(&config, out)?;
            report(&experiment::export_oracle(&cfg)?);
        }
        Command::Diagnose { config, out } => {
            let cfg = load(&config, out)?;
            report(&experiment::diagnose(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
