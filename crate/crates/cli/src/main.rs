mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use codespace_core::calibrate::{CalibrationTarget, DistanceBasis};
use codespace_core::model::Condition;

use crate::commands::{CalibrateArgs, ExperimentArgs};
use crate::config::{Overrides, Resolved};
use crate::error::CliError;

/// Consolidates coders' codebooks and scores each coder against the result.
#[derive(Debug, Parser)]
#[command(name = "codespace", version)]
struct Cli {
    /// Run-config file (TOML).
    #[arg(short, long, global = true, default_value = "codespace.toml")]
    config: PathBuf,
    /// Print the resolved plan without reading data or calling providers.
    #[arg(long, global = true)]
    dry_run: bool,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    strict_threshold: Option<f64>,
    #[arg(long, global = true)]
    lower_threshold: Option<f64>,
    #[arg(long, global = true)]
    upper_threshold: Option<f64>,
    #[arg(long, global = true)]
    penalty: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate and normalize the configured codebooks.
    Ingest,
    /// Build the aggregate code space for one condition.
    Merge {
        #[arg(long)]
        condition: Condition,
        /// Seed for stochastic providers.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score every coder against an aggregate code space.
    Evaluate {
        #[arg(long)]
        acs: PathBuf,
        /// ai, human, all or name=a,b; repeatable.
        #[arg(long = "group")]
        groups: Vec<String>,
    },
    /// Repeated runs over conditions, with a stability report.
    Experiment {
        #[arg(long)]
        repeats: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "condition")]
        conditions: Vec<Condition>,
        #[arg(long = "group")]
        groups: Vec<String>,
    },
    /// Sample code pairs just below a threshold for review, or recommend a
    /// threshold from reviewed decisions.
    CalibrateSample {
        #[arg(long, default_value_t = 0.32)]
        threshold: f64,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, value_enum, default_value_t = Basis::Label)]
        basis: Basis,
        /// Stage the pairs are drawn from when no `--acs` is given.
        #[arg(long, default_value = "c1")]
        condition: Condition,
        #[arg(long)]
        acs: Option<PathBuf>,
        /// Reviewed decisions; switches to recommendation mode.
        #[arg(long)]
        decisions: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Target::Strict)]
        target: Target,
    },
    /// Write the node/edge export of an aggregate code space with per-coder
    /// observations.
    ExportNetwork {
        #[arg(long)]
        acs: PathBuf,
        #[arg(long = "group")]
        groups: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Basis {
    Label,
    LabelDefinition,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Target {
    Strict,
    Upper,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        output_dir: cli.output_dir,
        strict_threshold: cli.strict_threshold,
        lower_threshold: cli.lower_threshold,
        upper_threshold: cli.upper_threshold,
        penalty: cli.penalty,
    };
    let cfg = Resolved::load(&cli.config, &overrides)?;
    let dry = cli.dry_run;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg, dry),
        Command::Merge { condition, seed } => commands::merge(&cfg, condition, seed, dry),
        Command::Evaluate { acs, groups } => commands::evaluate_cmd(&cfg, &acs, &groups, dry),
        Command::Experiment {
            repeats,
            seed,
            conditions,
            groups,
        } => commands::experiment(
            &cfg,
            ExperimentArgs {
                repeats,
                seed,
                conditions,
                groups,
            },
            dry,
        ),
        Command::CalibrateSample {
            threshold,
            count,
            basis,
            condition,
            acs,
            decisions,
            target,
        } => commands::calibrate_sample(
            &cfg,
            CalibrateArgs {
                threshold,
                count,
                basis: match basis {
                    Basis::Label => DistanceBasis::Label,
                    Basis::LabelDefinition => DistanceBasis::LabelDefinition,
                },
                condition,
                acs,
                decisions,
                target: match target {
                    Target::Strict => CalibrationTarget::Strict,
                    Target::Upper => CalibrationTarget::Upper,
                },
            },
            dry,
        ),
        Command::ExportNetwork { acs, groups } => commands::export_network(&cfg, &acs, &groups, dry),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.envelope());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
