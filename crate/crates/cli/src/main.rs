//! `fourstate`: simulate a phase-encoding BB84 receiver with mismatched
//! gated detectors under time-shift attacks, and quantify how four-state
//! demodulation restores the secret key rate.
//!
//! Subcommands mirror the analysis pipeline: `characterize` sweeps the
//! arrival time and records counts, `attack` finds the eavesdropper's best
//! shift pair, `keyrate` computes filtered key-rate bounds at two
//! resolutions, `sweep-loss` produces rate-vs-loss curves, and `oracle`
//! runs the brute-force validators.
//!
//! Exit codes: 0 success, 2 configuration error, 3 infeasible
//! optimization, 4 protocol aborted (QBER over threshold).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::RunConfig;
use fourstate_core::protocol::DemodMode;

/// Configuration-stage failure; maps to exit code 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

/// The bound optimization has an empty constraint set; exit code 3.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct InfeasibleError(pub String);

/// The protocol would abort before distilling key; exit code 4.
#[derive(Debug, Error)]
#[error("protocol aborted: baseline QBER {qber:.4} exceeds threshold {threshold}")]
pub struct AbortedError {
    pub qber: f64,
    pub threshold: f64,
}

#[derive(Parser)]
#[command(name = "fourstate", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed (mandatory when no config file is given).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Demodulation mode override.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<DemodMode>,
    /// Load detector curves from a CSV instead of the config's source.
    #[arg(long, global = true)]
    curves_csv: Option<PathBuf>,
    /// Directory for relative output paths.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<DemodMode, String> {
    match s {
        "two-state" => Ok(DemodMode::TwoState),
        "four-state" => Ok(DemodMode::FourState),
        other => Err(format!(
            "unknown mode `{other}` (use two-state or four-state)"
        )),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the arrival time across the gate and record counts per shift.
    Characterize {
        #[command(flatten)]
        common: CommonArgs,
        /// Pulses per sweep point.
        #[arg(long)]
        n_pulses: Option<u64>,
        /// Sweep step in ps (default: curve grid step).
        #[arg(long)]
        step_ps: Option<f64>,
        /// Sweep span in ps, centered on zero (default: one clock period).
        #[arg(long)]
        span_ps: Option<f64>,
        /// Output CSV of per-shift counts.
        #[arg(long, default_value = "sweep.csv")]
        out_csv: PathBuf,
        /// Output JSON summary.
        #[arg(long, default_value = "sweep_summary.json")]
        out_json: PathBuf,
        /// Stream per-pulse records to this JSONL file (serial, slow).
        #[arg(long)]
        records: Option<PathBuf>,
        /// Also write the detector curves in use to this CSV.
        #[arg(long)]
        dump_curves: Option<PathBuf>,
    },
    /// Find the eavesdropper's best two-point time-shift strategy.
    Attack {
        #[command(flatten)]
        common: CommonArgs,
        /// Maximum average QBER the attack may cause.
        #[arg(long)]
        qber_cap: Option<f64>,
        #[arg(long, default_value = "attack_report.json")]
        out: PathBuf,
    },
    /// Compute filtered key-rate bounds at fine and coarse resolution.
    Keyrate {
        #[command(flatten)]
        common: CommonArgs,
        /// Fine analysis resolution in ps (default: curve grid step).
        #[arg(long)]
        dt_fine: Option<f64>,
        /// Coarse analysis resolution in ps (default: 11x fine).
        #[arg(long)]
        dt_coarse: Option<f64>,
        #[arg(long, default_value = "keyrate_report.json")]
        out: PathBuf,
    },
    /// Rate-vs-loss curves for the ideal receiver and both modes.
    SweepLoss {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "loss_sweep.csv")]
        out: PathBuf,
    },
    /// Run the brute-force validators against the implementations.
    Oracle {
        /// RNG seed for the random instances.
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Random instances per validator.
        #[arg(long, default_value_t = 300)]
        instances: usize,
    },
}

/// Assemble the effective config from the file (if any) plus overrides.
fn effective_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| anyhow!(ConfigError(format!("{e:#}"))))?,
        None => {
            let seed = common.seed.ok_or_else(|| {
                anyhow!(ConfigError(
                    "no --config given, so --seed is required for a reproducible run".into()
                ))
            })?;
            RunConfig::with_seed(seed)
        }
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(mode) = common.mode {
        config.receiver.mode = mode;
    }
    if let Some(path) = &common.curves_csv {
        config.curves = config::CurveSource::Csv { path: path.clone() };
    }
    // Validate curve and receiver construction up front so bad configs
    // fail before any work happens.
    let pair = config
        .detector_pair()
        .map_err(|e| anyhow!(ConfigError(format!("{e:#}"))))?;
    config
        .receiver_config(&pair)
        .map_err(|e| anyhow!(ConfigError(format!("{e:#}"))))?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Characterize {
            common,
            n_pulses,
            step_ps,
            span_ps,
            out_csv,
            out_json,
            records,
            dump_curves,
        } => {
            let mut config = effective_config(&common)?;
            if let Some(n) = n_pulses {
                config.n_pulses = n;
            }
            if step_ps.is_some() {
                config.sweep.step_ps = step_ps;
            }
            if span_ps.is_some() {
                config.sweep.span_ps = span_ps;
            }
            let dir = common.out_dir.as_deref();
            commands::characterize(
                &config,
                &commands::resolve_out(dir, &out_csv),
                &commands::resolve_out(dir, &out_json),
                records.map(|p| commands::resolve_out(dir, &p)).as_deref(),
                dump_curves
                    .map(|p| commands::resolve_out(dir, &p))
                    .as_deref(),
            )
        }
        Command::Attack {
            common,
            qber_cap,
            out,
        } => {
            let config = effective_config(&common)?;
            let cap = qber_cap.unwrap_or(config.keyrate.qber_threshold);
            commands::attack(
                &config,
                cap,
                &commands::resolve_out(common.out_dir.as_deref(), &out),
            )
        }
        Command::Keyrate {
            common,
            dt_fine,
            dt_coarse,
            out,
        } => {
            let mut config = effective_config(&common)?;
            if dt_fine.is_some() {
                config.keyrate.dt_fine_ps = dt_fine;
            }
            if dt_coarse.is_some() {
                config.keyrate.dt_coarse_ps = dt_coarse;
            }
            commands::keyrate(
                &config,
                &commands::resolve_out(common.out_dir.as_deref(), &out),
            )
        }
        Command::SweepLoss { common, out } => {
            let config = effective_config(&common)?;
            commands::sweep_loss(
                &config,
                &commands::resolve_out(common.out_dir.as_deref(), &out),
            )
        }
        Command::Oracle { seed, instances } => commands::oracle(seed, instances),
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        2
    } else if err.downcast_ref::<InfeasibleError>().is_some() {
        3
    } else if err.downcast_ref::<AbortedError>().is_some() {
        4
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
