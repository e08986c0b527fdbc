//! `dsba-sim`: run, compare and validate decentralized solvers.
//!
//! Exit codes: 0 success, 1 validation failure, 2 configuration error,
//! 3 runtime error.

mod commands;
mod config;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsba::{CommMode, TauMode, Variant};

use config::{FileConfig, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("validation failed")]
    Validation,
}

impl CliError {
    /// Setup failures (bad input, unreadable data, bad graph) are config errors.
    pub fn from_core(e: dsba::Error) -> Self {
        use dsba::Error as E;
        match e {
            E::Numerical(_) | E::Singular(_) | E::MissingPacket { .. } | E::Round { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }

    pub fn runtime(e: dsba::Error) -> Self {
        CliError::Runtime(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Validation => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dsba-sim", version, about = "Decentralized stochastic backward aggregation simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory.
    #[arg(short, long, env = "DSBA_OUT_DIR", default_value = "dsba-out")]
    out: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    comm: Option<CommMode>,
    /// tau = scale * lambda_max(L).
    #[arg(long)]
    tau_scale: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one configuration and write metrics.csv and manifest.json.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run several variants on the same graph and shards.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// Comma-separated variants; defaults to `compare.variants` or dsba,dsa,extra.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
    },
    /// Run the property suites and print a pass/fail table.
    Validate {
        #[arg(long)]
        tau_scale: Option<f64>,
        #[arg(long, default_value_t = dsba::operators::DEFAULT_NEWTON_ITERS)]
        newton_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Normalize and partition a dataset into per-node LIBSVM shards.
    Prep {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long, env = "DSBA_OUT_DIR", default_value = "dsba-out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(common: &Common, seed: Option<u64>) -> Result<FileConfig, CliError> {
    let mut file = FileConfig::load(&common.config)?;
    file.apply(&Overrides {
        alpha: common.alpha,
        rounds: common.rounds,
        seed,
        variant: common.variant,
        comm: common.comm,
        tau_scale: common.tau_scale,
    });
    Ok(file)
}

fn dispatch(cli: Cli) -> Result<String, CliError> {
    match cli.cmd {
        Command::Run { common, seed } => {
            let file = load(&common, seed)?;
            commands::cmd_run(&file, &common.out)
        }
        Command::Compare { common, seed, variants } => {
            let file = load(&common, Some(seed))?;
            let variants = variants
                .or_else(|| file.compare.variants.clone())
                .unwrap_or_else(|| vec![Variant::Dsba, Variant::Dsa, Variant::Extra]);
            commands::cmd_compare(&file, &variants, &common.out)
        }
        Command::Validate { tau_scale, newton_iters, seed } => {
            if newton_iters == 0 {
                return Err(CliError::Config("--newton-iters must be >= 1".into()));
            }
            let opts = validate::ValidateOptions {
                tau: tau_scale.map_or(TauMode::Spectral, TauMode::Scaled),
                newton_iters,
                seed,
            };
            let report = validate::run_all(&opts);
            print!("{}", report.render());
            if report.all_passed() {
                Ok("all checks PASS".into())
            } else {
                Err(CliError::Validation)
            }
        }
        Command::Prep { config, out, seed } => {
            let mut file = FileConfig::load(&config)?;
            file.apply(&Overrides { seed, ..Default::default() });
            commands::cmd_prep(&file, &out)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dsba-sim: {e}");
            ExitCode::from(e.code())
        }
    }
}
