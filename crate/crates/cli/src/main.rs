use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod failure;
mod plots;

use commands::Ctx;
use config::RunConfig;
use failure::{CliResult, Failure};

#[derive(Parser)]
#[command(name = "mepck", version, about = "Multi-element PC-Kriging surrogates and DRAM calibration")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Model file to write (build) or read (validate, sobol, infer).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Data file: a validation design for validate, a flux curve for infer.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Worker threads for per-cell fitting; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Draw the per-cell experimental designs.
    Sample,
    /// Sample, fit and save a multi-element surrogate.
    Build,
    /// Score a saved model against a validation set.
    Validate,
    /// Sobol indices of a pilot expansion, or of each cell of a saved model.
    Sobol,
    /// Solve the TDS model for one set of trap parameters.
    Tds,
    /// Calibrate trap parameters against a measured flux curve.
    Infer,
    /// Drop-Wave benchmark over ED sizes and partition levels.
    BenchDropwave,
}

fn run(cli: Cli) -> CliResult<()> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::cli("--config <file> is required"))?;
    let cfg = RunConfig::load(path)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::cli(format!("cannot set up {n} threads: {e}")))?;
    }
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(cfg.seed),
        out: cfg.out_dir(cli.out.as_deref()),
        model: cli.model,
        data: cli.data,
        cfg,
    };
    commands::ensure_out(&ctx.out)?;
    match cli.command {
        Command::Sample => commands::sample(&ctx),
        Command::Build => commands::build(&ctx),
        Command::Validate => commands::validate(&ctx),
        Command::Sobol => commands::sobol(&ctx),
        Command::Tds => commands::tds(&ctx),
        Command::Infer => commands::infer(&ctx),
        Command::BenchDropwave => commands::bench_dropwave(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::to_string(&f).unwrap_or_else(|_| f.message.clone()));
            ExitCode::FAILURE
        }
    }
}
