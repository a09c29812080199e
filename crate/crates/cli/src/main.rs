//! `triband`: simulate, optimize and cross-check multiband links.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 solver error,
//! 3 infeasible optimization constraints, 4 oracle tolerance breach,
//! 64 usage error.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod error;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::exit;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "TRIBAND_OUT";

#[derive(Parser, Debug)]
#[command(name = "triband", version, about = "Multiband C+L+S link simulator and optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-channel OSNR, GSNR and throughput for a scenario.
    Simulate(SimulateArgs),
    /// Optimize launch powers and Raman pumps.
    Optimize(OptimizeArgs),
    /// Compare the closed-form NLI with numerical integration.
    OracleCheck(OracleArgs),
    /// Throughput versus a flat launch power.
    Sweep(SweepArgs),
    /// Parse and validate a scenario without running it.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Args, Debug)]
pub struct Common {
    /// Scenario TOML file, or `preset:cls_default` / `preset:cls_pumped`.
    pub scenario: String,
    /// Override the scenario's ISRS switch.
    #[arg(long)]
    pub isrs: Option<OnOff>,
    /// Output directory (default: $TRIBAND_OUT, else ./triband-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Objective {
    /// Mean information rate.
    Eq1,
    /// Mean information rate minus its spread.
    Eq2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Launch {
    PerChannel,
    PerBandTilt,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "eq1")]
    pub objective: Objective,
    /// Pump count (placed at the default starting point) or `none`;
    /// without the flag the scenario's pumps are used.
    #[arg(long)]
    pub pumps: Option<String>,
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    pub budget: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "per-channel")]
    pub launch_mode: Launch,
    /// Per-pump power caps in dBm, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub pump_caps: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    pub total_pump_cap_w: f64,
    #[arg(long, default_value_t = 211.5)]
    pub pump_freq_floor: f64,
    #[arg(long, default_value_t = -10.0, allow_negative_numbers = true)]
    pub launch_min: f64,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub launch_max: f64,
    /// Keep pump frequencies at their starting values.
    #[arg(long)]
    pub fixed_pump_freqs: bool,
    /// Continue from the checkpoint left in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Channel indices, comma separated.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub channels: Vec<usize>,
    /// Largest accepted |closed form − oracle|, dB.
    #[arg(long, default_value_t = 0.5)]
    pub tol: f64,
    /// Relative accuracy of the numerical integration.
    #[arg(long, default_value_t = 1e-3)]
    pub rel_tol: f64,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, allow_negative_numbers = true, default_value_t = -4.0)]
    pub from: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = 6.0)]
    pub to: f64,
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    pub scenario: String,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Optimize(a) => commands::optimize(&a),
        Command::OracleCheck(a) => commands::oracle_check(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Validate(a) => commands::validate(&a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}
