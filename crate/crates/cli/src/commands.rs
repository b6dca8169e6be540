//! Subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;

use fourstate_core::attack::{optimize_shift_pair, sweep_characterization, SweepPoint};
use fourstate_core::detector::save_curves_csv;
use fourstate_core::keyrate::{self, KeyRateError, KeyRateInputs, ModeBounds, PipelineReport};
use fourstate_core::protocol::{analytic_point, run_session_with_sink, DemodMode, ReceiverConfig};
use fourstate_core::{stats, EveStrategy};

use crate::config::RunConfig;
use crate::{AbortedError, InfeasibleError};

/// Map pipeline errors onto the exit-code taxonomy: unreachable
/// observations are infeasibility (exit 3), the rest bubble up.
fn map_keyrate_err(e: KeyRateError) -> anyhow::Error {
    match e {
        KeyRateError::InfeasibleObservation { .. } | KeyRateError::NoFeasibleBins(_) => {
            anyhow::Error::new(InfeasibleError(e.to_string()))
        }
        other => anyhow::Error::new(other),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_file(path, &body)
}

#[derive(Serialize)]
struct SweepSummary {
    mode: DemodMode,
    seed: u64,
    n_pulses_per_point: u64,
    n_points: usize,
    qber_threshold: f64,
    /// Extent of the contiguous run of below-threshold points around zero
    /// shift, if zero shift itself is below threshold.
    window_lo_ps: Option<f64>,
    window_hi_ps: Option<f64>,
    max_abs_bias_in_window: Option<f64>,
}

fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("shift_ps,c0,c1,sifted,errors,qber,bias\n");
    for p in points {
        let qber = stats::qber(&p.counts).unwrap_or(f64::NAN);
        let bias = stats::bias_contrast(&p.counts).unwrap_or(f64::NAN);
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.shift_ps, p.counts.c0, p.counts.c1, p.counts.sifted, p.counts.errors, qber, bias
        ));
    }
    out
}

fn summarize_sweep(points: &[SweepPoint], config: &RunConfig, mode: DemodMode) -> SweepSummary {
    let threshold = config.keyrate.qber_threshold;
    let below: Vec<bool> = points
        .iter()
        .map(|p| {
            stats::qber(&p.counts)
                .map(|q| q <= threshold)
                .unwrap_or(false)
        })
        .collect();
    let zero_idx = points
        .iter()
        .position(|p| p.shift_ps == 0.0)
        .unwrap_or(points.len() / 2);

    let (mut window, mut max_bias) = (None, None);
    if below.get(zero_idx) == Some(&true) {
        let mut lo = zero_idx;
        while lo > 0 && below[lo - 1] {
            lo -= 1;
        }
        let mut hi = zero_idx;
        while hi + 1 < below.len() && below[hi + 1] {
            hi += 1;
        }
        window = Some((points[lo].shift_ps, points[hi].shift_ps));
        max_bias = points[lo..=hi]
            .iter()
            .filter_map(|p| stats::bias_contrast(&p.counts).ok())
            .map(f64::abs)
            .fold(None, |acc: Option<f64>, b| {
                Some(acc.map_or(b, |a| a.max(b)))
            });
    }

    SweepSummary {
        mode,
        seed: config.seed,
        n_pulses_per_point: config.n_pulses,
        n_points: points.len(),
        qber_threshold: threshold,
        window_lo_ps: window.map(|w| w.0),
        window_hi_ps: window.map(|w| w.1),
        max_abs_bias_in_window: max_bias,
    }
}

pub fn characterize(
    config: &RunConfig,
    out_csv: &Path,
    out_json: &Path,
    records: Option<&Path>,
    dump_curves: Option<&Path>,
) -> Result<()> {
    let pair = config.detector_pair()?;
    let receiver = config.receiver_config(&pair)?;
    let shifts = config.sweep_shifts(&pair);

    if let Some(path) = dump_curves {
        save_curves_csv(&pair, path)?;
    }

    let points = if let Some(records_path) = records {
        // Streaming per-pulse records forces a serial sweep.
        let file = std::fs::File::create(records_path)
            .with_context(|| format!("creating {}", records_path.display()))?;
        let mut writer = std::io::BufWriter::new(file);
        let mut points = Vec::with_capacity(shifts.len());
        for (idx, &shift_ps) in shifts.iter().enumerate() {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(
                fourstate_core::attack::point_seed(config.seed, idx),
            );
            let mut io_err = None;
            let counts = run_session_with_sink(
                &pair,
                &receiver,
                &EveStrategy::fixed(shift_ps),
                config.n_pulses,
                &mut rng,
                |record| {
                    if io_err.is_none() {
                        let line = serde_json::to_string(record).expect("record serializes");
                        if let Err(e) = writeln!(writer, "{line}") {
                            io_err = Some(e);
                        }
                    }
                },
            )?;
            if let Some(e) = io_err {
                return Err(e).with_context(|| format!("writing {}", records_path.display()));
            }
            points.push(SweepPoint { shift_ps, counts });
        }
        points
    } else {
        sweep_characterization(&pair, &receiver, &shifts, config.n_pulses, config.seed)?
    };

    write_file(out_csv, &sweep_csv(&points))?;
    write_json(out_json, &summarize_sweep(&points, config, receiver.mode))?;
    Ok(())
}

#[derive(Serialize)]
struct AttackReport {
    mode: DemodMode,
    qber_cap: f64,
    baseline_qber: f64,
    feasible: bool,
    t1_ps: Option<f64>,
    t2_ps: Option<f64>,
    p1: Option<f64>,
    eve_info_bits: f64,
    predicted_qber: Option<f64>,
    bias_at_t1: Option<f64>,
    bias_at_t2: Option<f64>,
}

pub fn attack(config: &RunConfig, qber_cap: f64, out: &Path) -> Result<()> {
    let pair = config.detector_pair()?;
    let receiver = config.receiver_config(&pair)?;
    let grid = config.sweep_shifts(&pair);

    let baseline = analytic_point(&pair, &receiver, 0.0, 1.0)?;
    let choice = optimize_shift_pair(&pair, &receiver, qber_cap, &grid)?;

    let report = match choice {
        Some(c) => {
            let bias_at = |shift: f64| -> Result<f64> {
                Ok(analytic_point(&pair, &receiver, shift, 1.0)?.bias())
            };
            AttackReport {
                mode: receiver.mode,
                qber_cap,
                baseline_qber: baseline.qber(),
                feasible: true,
                t1_ps: Some(c.t1_ps),
                t2_ps: Some(c.t2_ps),
                p1: Some(c.p1),
                eve_info_bits: c.eve_info_bits,
                predicted_qber: Some(c.predicted_qber),
                bias_at_t1: Some(bias_at(c.t1_ps)?),
                bias_at_t2: Some(bias_at(c.t2_ps)?),
            }
        }
        None => AttackReport {
            mode: receiver.mode,
            qber_cap,
            baseline_qber: baseline.qber(),
            feasible: false,
            t1_ps: None,
            t2_ps: None,
            p1: None,
            eve_info_bits: 0.0,
            predicted_qber: None,
            bias_at_t1: None,
            bias_at_t2: None,
        },
    };
    write_json(out, &report)
}

#[derive(Serialize)]
struct KeyrateOutput {
    inputs: KeyRateInputs,
    qber_threshold: f64,
    baseline_qber: f64,
    fine: PipelineReport,
    coarse: PipelineReport,
}

pub fn keyrate(config: &RunConfig, out: &Path) -> Result<()> {
    let pair = config.detector_pair()?;
    let receiver = config.receiver_config(&pair)?;
    let threshold = config.keyrate.qber_threshold;

    let baseline = analytic_point(&pair, &receiver, 0.0, 1.0)?;
    let baseline_qber = baseline.qber();
    if stats::abort_check(baseline_qber, threshold) {
        return Err(anyhow::Error::new(AbortedError {
            qber: baseline_qber,
            threshold,
        }));
    }

    let inputs = config
        .keyrate_inputs(&pair, &receiver)
        .map_err(|e| anyhow!("deriving key-rate inputs: {e}"))?;
    let dt_fine = config.keyrate.dt_fine_ps.unwrap_or_else(|| pair.dt_ps());
    let dt_coarse = config.keyrate.dt_coarse_ps.unwrap_or(11.0 * dt_fine);

    let (fine, coarse) =
        keyrate::resolution_comparison(&pair, &receiver, dt_fine, dt_coarse, &inputs, threshold)
            .map_err(map_keyrate_err)?;

    write_json(
        out,
        &KeyrateOutput {
            inputs,
            qber_threshold: threshold,
            baseline_qber,
            fine,
            coarse,
        },
    )
}

pub fn sweep_loss(config: &RunConfig, out: &Path) -> Result<()> {
    let pair = config.detector_pair()?;
    let threshold = config.keyrate.qber_threshold;

    // Per-mode bounds: from the config when pinned, otherwise from the
    // pipeline run on the configured curves.
    let bounds = |mode: DemodMode, pinned: Option<ModeBounds>| -> Result<ModeBounds> {
        if let Some(b) = pinned {
            return Ok(b);
        }
        let receiver = ReceiverConfig {
            mode,
            ..config.receiver_config(&pair)?
        };
        let inputs = config.keyrate_inputs(&pair, &receiver)?;
        let report = keyrate::key_rate_report(&pair, &receiver, &inputs, threshold)
            .map_err(map_keyrate_err)?;
        Ok(ModeBounds {
            p_succ: report.report.p_succ,
            e_phase: report.report.e_phase,
        })
    };
    let two_state = bounds(DemodMode::TwoState, config.loss.two_state)?;
    let four_state = bounds(DemodMode::FourState, config.loss.four_state)?;

    let receiver = config.receiver_config(&pair)?;
    let inputs = config.keyrate_inputs(&pair, &receiver)?;
    let points = keyrate::rate_vs_loss(&inputs, two_state, four_state, &config.loss.sweep_config());

    let mut csv = String::from("loss_db,rate_ideal,rate_two_state,rate_four_state\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            p.loss_db, p.rate_ideal, p.rate_two_state, p.rate_four_state
        ));
    }
    write_file(out, &csv)
}

pub fn oracle(seed: u64, instances: usize) -> Result<()> {
    let results = fourstate_core::oracle::run_all(seed, instances);
    let mut all_pass = true;
    for r in &results {
        println!(
            "{} {} ({} instances, max deviation {:.3e}, tolerance {:.1e})",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.instances,
            r.max_deviation,
            r.tolerance
        );
        all_pass &= r.pass;
    }
    if all_pass {
        Ok(())
    } else {
        Err(anyhow!("one or more validators failed"))
    }
}

/// Resolve an output path against an optional output directory.
pub fn resolve_out(dir: Option<&Path>, name: &Path) -> PathBuf {
    match dir {
        Some(d) if name.is_relative() => d.join(name),
        _ => name.to_path_buf(),
    }
}
