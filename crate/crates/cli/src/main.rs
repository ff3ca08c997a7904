use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use versabo::bench::{run_benchmark, BenchError, BenchmarkConfig, RunOptions, SYSTEM_IDS};
use versabo::ensemble::CombineRule;
use versabo::zoo::MODEL_IDS;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "versabo", version, about = "Bayesian optimization benchmarks over probabilistic models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark config and write trace.csv and summary.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory. Falls back to the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the number of trials per cell.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Acceptance rule for product-of-experts models.
        #[arg(long, value_parser = parse_rule)]
        combine_rule: Option<CombineRule>,
        /// Run trials one at a time on the main thread.
        #[arg(long)]
        serial: bool,
    },
    /// Print the model registry ids.
    ListModels,
    /// Print the synthetic system ids.
    ListSystems,
}

fn parse_rule(s: &str) -> Result<CombineRule, String> {
    s.parse().map_err(|e: versabo::Error| e.to_string())
}

fn run(
    config: PathBuf,
    out: Option<PathBuf>,
    trials: Option<usize>,
    seed: Option<u64>,
    combine_rule: Option<CombineRule>,
    serial: bool,
) -> Result<(), BenchError> {
    let mut cfg = BenchmarkConfig::load(&config)?;
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = combine_rule {
        cfg.combine_rule = r;
    }
    cfg.validate()?;
    let out = out
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| BenchError::Config("no output directory: pass --out or set `output`".into()))?;
    let report = run_benchmark(&cfg, &out, &RunOptions { serial, threads: None })?;
    log::info!("{} rows in {} ms", report.rows, report.elapsed_ms);
    println!("{}", report.trace.display());
    println!("{}", report.summary.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ListModels => {
            for id in MODEL_IDS {
                println!("{id}");
            }
            println!("bpoe:<model>+<model>");
            Ok(())
        }
        Command::ListSystems => {
            for id in SYSTEM_IDS {
                println!("{id}");
            }
            Ok(())
        }
        Command::Run { config, out, trials, seed, combine_rule, serial } => {
            run(config, out, trials, seed, combine_rule, serial)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                BenchError::Config(_) => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            })
        }
    }
}
