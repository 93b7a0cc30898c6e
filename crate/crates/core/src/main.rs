use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hexlog::cli::{self, CliError, OutputFormat, SweepSpec};
use hexlog::protocol::Threshold;

#[derive(Parser)]
#[command(
    name = "hexlog",
    version,
    about = "Distance-based checkpoint/log recovery simulator"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its metrics.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: OutputFormat,
    },
    /// Run every (K, seed) combination and print one CSV row per run.
    Sweep {
        config: PathBuf,
        /// Comma list, e.g. `0,1,2,4,INF`.
        #[arg(long)]
        k: String,
        /// Comma list of seeds or inclusive ranges, e.g. `1..20`.
        #[arg(long)]
        seeds: String,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the protocol trace of one host.
    Trace {
        config: PathBuf,
        #[arg(long)]
        host: u32,
    },
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Run {
            config,
            seed,
            k,
            out,
            format,
        } => {
            let mut cfg = cli::load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(raw) = k {
                cfg.k = raw
                    .parse::<Threshold>()
                    .map_err(|e| CliError::Args(format!("--k: {e}")))?;
            }
            let text = cli::run_scenario(&cfg, format)?;
            emit(&text, out.as_ref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            config,
            k,
            seeds,
            parallelism,
            out,
        } => {
            let spec = SweepSpec {
                base: cli::load_config(&config)?,
                k_values: cli::parse_k_list(&k)?,
                seeds: cli::parse_seed_list(&seeds)?,
                parallelism,
            };
            let (text, failed) = spec.run_csv()?;
            emit(&text, out.as_ref())?;
            Ok(if failed {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Trace { config, host } => {
            let cfg = cli::load_config(&config)?;
            let text = cli::trace_host(&cfg, host)?;
            emit(&text, None)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HEXLOG_LOG_LEVEL", "error"))
        .init();
    let args = Args::parse();
    match execute(args.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
