//! Experiment runner: solves power-control instances, sweeps the SMCV,
//! cross-checks the closed form against the brute-force oracle, and runs the
//! federated training comparisons. Emits CSV data, JSON summaries and a
//! manifest per run.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use config::{load_config, OracleCheckConfig, RunConfig, SolveConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or flags; exit code 2.
    Config(String),
    /// Failure while running the experiment; exit code 1.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(msg) => write!(f, "error: {msg}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CommandKind {
    /// Solve one instance across an SMCV grid; emits sweep_beta.csv
    SweepBeta,
    /// Solve one instance at a fixed SMCV; emits solution.csv
    SolveOnce,
    /// Compare the closed form against the brute-force search on random instances
    OracleCheck,
    /// Federated training comparison across schemes and seeds
    FlRun,
    /// Per-round gradient statistics under ideal aggregation, IID and non-IID
    Fig2Stats,
    /// Final accuracy per scheme across an SNR grid
    SnrSweep,
    /// Final accuracy per scheme across a device-count grid
    DeviceSweep,
}

impl CommandKind {
    fn name(&self) -> &'static str {
        match self {
            CommandKind::SweepBeta => "sweep-beta",
            CommandKind::SolveOnce => "solve-once",
            CommandKind::OracleCheck => "oracle-check",
            CommandKind::FlRun => "fl-run",
            CommandKind::Fig2Stats => "fig2-stats",
            CommandKind::SnrSweep => "snr-sweep",
            CommandKind::DeviceSweep => "device-sweep",
        }
    }
}

#[derive(Parser)]
#[command(name = "aircomp", version, about = "Analog gradient aggregation experiments")]
struct Cli {
    /// Experiment to run
    #[arg(value_enum)]
    command: CommandKind,
    /// JSON config file (strict; schema depends on the command)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// oracle-check only: device count override
    #[arg(long)]
    k: Option<usize>,
    /// oracle-check only: trial count override
    #[arg(long)]
    trials: Option<usize>,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", cli.out.display())))?;
    let command = cli.command.name();
    match cli.command {
        CommandKind::SweepBeta | CommandKind::SolveOnce => {
            let path = cli.config.as_ref().ok_or_else(|| {
                CliError::Config(format!("{command} requires --config with channel magnitudes"))
            })?;
            let cfg: SolveConfig = load_config(path)?;
            let outputs = match cli.command {
                CommandKind::SweepBeta => commands::cmd_sweep_beta(&cfg, &cli.out)?,
                _ => commands::cmd_solve_once(&cfg, &cli.out)?,
            };
            commands::finish(&cli.out, command, cli.seed, &cfg, &outputs)
        }
        CommandKind::OracleCheck => {
            let mut cfg: OracleCheckConfig = match &cli.config {
                Some(path) => load_config(path)?,
                None => OracleCheckConfig::default(),
            };
            if let Some(k) = cli.k {
                cfg.k = k;
            }
            if let Some(trials) = cli.trials {
                cfg.trials = trials;
            }
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let outputs = commands::cmd_oracle_check(&cfg, &cli.out)?;
            commands::finish(&cli.out, command, Some(cfg.seed), &cfg, &outputs)
        }
        CommandKind::FlRun
        | CommandKind::Fig2Stats
        | CommandKind::SnrSweep
        | CommandKind::DeviceSweep => {
            let mut cfg: RunConfig = match &cli.config {
                Some(path) => load_config(path)?,
                None => RunConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.master_seed = seed;
            }
            let outputs = match cli.command {
                CommandKind::FlRun => commands::cmd_fl_run(&cfg, &cli.out)?,
                CommandKind::Fig2Stats => commands::cmd_fig2_stats(&cfg, &cli.out)?,
                CommandKind::SnrSweep => commands::cmd_snr_sweep(&cfg, &cli.out)?,
                _ => commands::cmd_device_sweep(&cfg, &cli.out)?,
            };
            commands::finish(&cli.out, command, Some(cfg.master_seed), &cfg, &outputs)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
