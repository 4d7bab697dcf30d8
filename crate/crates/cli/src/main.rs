//! `modflow`: train, sample, evaluate and fine-tune discrete graph flows.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "modflow", version, about = "Discrete modulo-shift flows for molecules and graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat key=value config file; `modflow keys` lists every key.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key; may be repeated. Applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// External scorer command (same as --set reward.command=CMD).
    #[arg(long, global = true, value_name = "CMD")]
    scorer_cmd: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Maximum-likelihood training on `data`.
    Train,
    /// Generate `sample.count` graphs from `checkpoint`.
    Sample,
    /// Validity, uniqueness, novelty and reconstruction for molecules; MMD
    /// for generic graphs.
    Eval,
    /// PPO fine-tuning towards a property.
    OptProperty,
    /// PPO fine-tuning from prefixes of `constrained.inputs`.
    OptConstrained,
    /// Write a synthetic two-community dataset.
    GenCommunity,
    /// Print the effective configuration.
    Config,
    /// List every config key with its default.
    Keys,
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for assignment in &cli.overrides {
        config.apply(assignment)?;
    }
    if let Some(cmd) = &cli.scorer_cmd {
        config.set("reward.command", cmd)?;
    }
    Ok(config)
}

/// Caps the global worker pool at `DGF_THREADS` when set.
fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("DGF_THREADS") else { return Ok(()) };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("DGF_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))
}

fn run(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    let config = load_config(cli)?;
    match cli.command {
        Command::Train => commands::train(&config),
        Command::Sample => commands::sample(&config),
        Command::Eval => commands::eval(&config),
        Command::OptProperty => commands::opt_property(&config),
        Command::OptConstrained => commands::opt_constrained(&config),
        Command::GenCommunity => commands::gen_community(&config),
        Command::Config => {
            print!("{}", config.render());
            Ok(())
        }
        Command::Keys => {
            print!("{}", RunConfig::describe());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // help and version requests are not usage errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("modflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
