//! Secret-key-rate bounds under time-dependent detection efficiency
//! mismatch.
//!
//! The security model treats the attacker as free to choose a probability
//! distribution `q(t)` over the arrival-time bins that survive the QBER
//! abort check, subject to reproducing the observed bit error rate. With
//! diagonal (time-only) efficiency models the two bound computations
//! reduce to a linear program over `q`:
//!
//! - minimize the Procrustean filtering success `sum q(t) p(t)`, and
//! - maximize the filtered phase error, which under the conservative
//!   assumption that every observed error survives filtering equals
//!   `e_phase_obs / p_succ(q)` and is therefore maximized by the same `q`.
//!
//! The LP is solved with a small dense two-phase simplex. A coarser
//! worst-bin bound (ignore the error-matching constraint entirely) is kept
//! alongside as the always-more-conservative analytic fallback, and an
//! independent vertex-enumeration oracle lives in [`crate::oracle`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{logical_curves, CurveError, DetectorPair};
use crate::protocol::{analytic_point, DemodMode, ProtocolError, ReceiverConfig};

#[derive(Debug, Error)]
pub enum KeyRateError {
    #[error("binary entropy argument {0} is outside [0, 1]")]
    EntropyDomain(f64),
    #[error("efficiencies must be positive, got ({0}, {1})")]
    NonPositiveEfficiency(f64, f64),
    #[error("bin has zero efficiency on both detectors; no detections possible")]
    DeadBin,
    #[error("no arrival-time bin stays under the QBER threshold {0}")]
    NoFeasibleBins(f64),
    #[error(
        "observed error rate {e_obs} is unreachable on the feasible bins \
         (predicted range [{min}, {max}])"
    )]
    InfeasibleObservation { e_obs: f64, min: f64, max: f64 },
    #[error("input {name} = {value} is out of range")]
    BadInput { name: &'static str, value: f64 },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// Binary entropy `H2(x) = -x log2 x - (1-x) log2 (1-x)`, with
/// `0 log 0 = 0`.
pub fn binary_entropy(x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "binary entropy domain: {x}");
    if x == 0.0 || x == 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Key-rate prefactor recovering security under a *static* efficiency
/// mismatch: `min(eta0, eta1) / (eta0 + eta1)`.
pub fn static_prefactor(eta0: f64, eta1: f64) -> f64 {
    assert!(
        eta0 > 0.0 && eta1 > 0.0,
        "static prefactor needs positive efficiencies"
    );
    eta0.min(eta1) / (eta0 + eta1)
}

/// Success probability of Procrustean filtering at one arrival-time bin,
/// conditional on a detection there: `2 min(eta0, eta1) / (eta0 + eta1)`.
/// Equals 1 exactly when the detectors match.
pub fn procrustean_success(eta0_t: f64, eta1_t: f64) -> Result<f64, KeyRateError> {
    if eta0_t < 0.0 || eta1_t < 0.0 {
        return Err(KeyRateError::NonPositiveEfficiency(eta0_t, eta1_t));
    }
    if eta0_t == 0.0 && eta1_t == 0.0 {
        return Err(KeyRateError::DeadBin);
    }
    Ok(2.0 * eta0_t.min(eta1_t) / (eta0_t + eta1_t))
}

/// Observed error rates and error-correction efficiency entering the rate
/// formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateInputs {
    pub e_bit_obs: f64,
    pub e_phase_obs: f64,
    pub f_ec: f64,
}

impl Default for KeyRateInputs {
    fn default() -> Self {
        Self {
            e_bit_obs: 0.03,
            e_phase_obs: 0.03,
            f_ec: 1.10,
        }
    }
}

impl KeyRateInputs {
    /// Inputs consistent with what the receiver itself observes: both
    /// error rates set to the analytic zero-shift QBER of the system
    /// (dark counts included), with the given error-correction efficiency.
    ///
    /// The bound optimization constrains the attacker to reproduce the
    /// observed error rate, so feeding a rate the model cannot produce
    /// would make the constraint set empty.
    pub fn observed(
        pair: &DetectorPair,
        receiver: &ReceiverConfig,
        f_ec: f64,
    ) -> Result<Self, KeyRateError> {
        let baseline = analytic_point(pair, receiver, 0.0, 1.0)?;
        if baseline.p_sifted <= 0.0 {
            return Err(KeyRateError::BadInput {
                name: "baseline sifted probability",
                value: 0.0,
            });
        }
        let q = baseline.qber();
        Ok(Self {
            e_bit_obs: q,
            e_phase_obs: q,
            f_ec,
        })
    }

    fn validate(&self) -> Result<(), KeyRateError> {
        for (name, value, hi) in [
            ("e_bit_obs", self.e_bit_obs, 0.5),
            ("e_phase_obs", self.e_phase_obs, 0.5),
        ] {
            if !(0.0..=hi).contains(&value) {
                return Err(KeyRateError::BadInput { name, value });
            }
        }
        if self.f_ec < 1.0 {
            return Err(KeyRateError::BadInput {
                name: "f_ec",
                value: self.f_ec,
            });
        }
        Ok(())
    }
}

/// Asymptotic secret key rate per filtered detection:
/// `max(0, p_succ (1 - H2(e_phase)) - f_ec H2(e_bit))`.
pub fn secret_key_rate(p_succ: f64, e_phase: f64, e_bit: f64, f_ec: f64) -> f64 {
    (p_succ * (1.0 - binary_entropy(e_phase)) - f_ec * binary_entropy(e_bit)).max(0.0)
}

/// Conservative filtered phase error when no per-bin refinement is used:
/// every observed phase error is assumed to survive the filter, giving
/// `min(0.5, e_phase_obs / p_succ)`.
pub fn analytic_phase_bound(p_succ: f64, e_phase_obs: f64) -> f64 {
    if p_succ <= 0.0 {
        return 0.5;
    }
    (e_phase_obs / p_succ).min(0.5)
}

/// The attacker-facing view of the feasible arrival-time bins: per bin the
/// Procrustean success probability and the predicted observable bit error
/// rate, for bins whose predicted QBER stays at or below the abort
/// threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct BinProblem {
    pub shifts_ps: Vec<f64>,
    pub p_succ: Vec<f64>,
    pub e_bit: Vec<f64>,
}

impl BinProblem {
    pub fn len(&self) -> usize {
        self.shifts_ps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts_ps.is_empty()
    }
}

/// Grid of signed shifts covering each arrival bin exactly once.
pub fn bin_shift_grid(pair: &DetectorPair) -> Vec<f64> {
    let n = pair.n_bins() as i64;
    let dt = pair.dt_ps();
    (0..n).map(|i| (i - n / 2) as f64 * dt).collect()
}

/// Build the feasible-bin problem for a receiver mode.
///
/// Per-bin bit errors come from the exact click model (droop and dark
/// counts included); Procrustean success probabilities are evaluated on
/// the mode's logical curves, and bins that cannot detect at all are
/// excluded along with bins over the QBER threshold.
pub fn feasible_bins(
    pair: &DetectorPair,
    receiver: &ReceiverConfig,
    qber_threshold: f64,
) -> Result<BinProblem, KeyRateError> {
    let geometry = receiver.geometry(pair)?;
    let logical = logical_curves(pair, receiver.mode);

    let mut problem = BinProblem {
        shifts_ps: Vec::new(),
        p_succ: Vec::new(),
        e_bit: Vec::new(),
    };
    for shift_ps in bin_shift_grid(pair) {
        let shift_bins = pair
            .apd0
            .bins_for_shift(shift_ps)
            .expect("grid shifts are aligned");
        let bin = geometry.arrival_bin(shift_bins);
        let eta0 = logical.apd0.samples()[bin];
        let eta1 = logical.apd1.samples()[bin];
        if eta0 == 0.0 && eta1 == 0.0 {
            continue;
        }
        let point = analytic_point(pair, receiver, shift_ps, 1.0)?;
        if point.p_sifted <= 0.0 {
            continue;
        }
        let qber = point.qber();
        if qber > qber_threshold {
            continue;
        }
        problem.shifts_ps.push(shift_ps);
        problem
            .p_succ
            .push(procrustean_success(eta0, eta1).expect("bin has detections"));
        problem.e_bit.push(qber);
    }
    if problem.is_empty() {
        return Err(KeyRateError::NoFeasibleBins(qber_threshold));
    }
    Ok(problem)
}

/// Output of a bound computation over the attacker's bin distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizedBounds {
    pub p_succ_min: f64,
    pub e_phase_max: f64,
    pub method: SolverMethod,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    Simplex,
    WorstBin,
    VertexEnumeration,
}

/// Tight bounds: minimize the filtering success over attacker
/// distributions that reproduce the observed bit error rate, then bound
/// the filtered phase error from it.
///
/// Errors with [`KeyRateError::InfeasibleObservation`] when no
/// distribution on the feasible bins can match `e_bit_obs`.
pub fn optimize_bounds(
    inputs: &KeyRateInputs,
    problem: &BinProblem,
) -> Result<OptimizedBounds, KeyRateError> {
    inputs.validate()?;
    let n = problem.len();
    assert!(n > 0, "empty bin problem");

    let (min_e, max_e) = problem
        .e_bit
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| {
            (lo.min(e), hi.max(e))
        });
    let tol = 1e-9;
    if inputs.e_bit_obs < min_e - tol || inputs.e_bit_obs > max_e + tol {
        return Err(KeyRateError::InfeasibleObservation {
            e_obs: inputs.e_bit_obs,
            min: min_e,
            max: max_e,
        });
    }

    // min p.q  s.t.  1.q = 1,  e.q = e_bit_obs,  q >= 0
    let rows = vec![vec![1.0; n], problem.e_bit.clone()];
    let rhs = vec![1.0, inputs.e_bit_obs];
    let solution = simplex::solve(&problem.p_succ, &rows, &rhs).ok_or(
        KeyRateError::InfeasibleObservation {
            e_obs: inputs.e_bit_obs,
            min: min_e,
            max: max_e,
        },
    )?;

    let p_succ_min = solution.objective.clamp(0.0, 1.0);
    Ok(OptimizedBounds {
        p_succ_min,
        e_phase_max: analytic_phase_bound(p_succ_min, inputs.e_phase_obs),
        method: SolverMethod::Simplex,
        iterations: solution.iterations,
    })
}

/// Coarse bounds ignoring the error-matching constraint: the attacker puts
/// everything on the worst feasible bin. Never tighter than
/// [`optimize_bounds`].
pub fn worst_bin_bounds(inputs: &KeyRateInputs, problem: &BinProblem) -> OptimizedBounds {
    let p = problem.p_succ.iter().cloned().fold(f64::INFINITY, f64::min);
    OptimizedBounds {
        p_succ_min: p,
        e_phase_max: analytic_phase_bound(p, inputs.e_phase_obs),
        method: SolverMethod::WorstBin,
        iterations: 0,
    }
}

/// One row of the resolution/mode comparison: the bounds and the rate at
/// one sampling resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub mode: DemodMode,
    pub dt_ps: f64,
    pub p_succ: f64,
    pub e_phase: f64,
    pub e_bit: f64,
    pub rate: f64,
}

/// A report together with its solver diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    #[serde(flatten)]
    pub report: KeyRateReport,
    pub feasible_bins: usize,
    pub solver: SolverInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub method: SolverMethod,
    pub iterations: usize,
}

/// Full pipeline at the pair's native resolution: feasible bins, LP
/// bounds, and the rate via the key-rate formula.
pub fn key_rate_report(
    pair: &DetectorPair,
    receiver: &ReceiverConfig,
    inputs: &KeyRateInputs,
    qber_threshold: f64,
) -> Result<PipelineReport, KeyRateError> {
    let problem = feasible_bins(pair, receiver, qber_threshold)?;
    let bounds = optimize_bounds(inputs, &problem)?;
    let rate = secret_key_rate(
        bounds.p_succ_min,
        bounds.e_phase_max,
        inputs.e_bit_obs,
        inputs.f_ec,
    );
    Ok(PipelineReport {
        report: KeyRateReport {
            mode: receiver.mode,
            dt_ps: pair.dt_ps(),
            p_succ: bounds.p_succ_min,
            e_phase: bounds.e_phase_max,
            e_bit: inputs.e_bit_obs,
            rate,
        },
        feasible_bins: problem.len(),
        solver: SolverInfo {
            method: bounds.method,
            iterations: bounds.iterations,
        },
    })
}

/// Run the pipeline at two sampling resolutions of the same pair and
/// report them side by side. The pair must be at `dt_fine_ps` (or finer);
/// the coarse run decimates it.
pub fn resolution_comparison(
    pair: &DetectorPair,
    receiver: &ReceiverConfig,
    dt_fine_ps: f64,
    dt_coarse_ps: f64,
    inputs: &KeyRateInputs,
    qber_threshold: f64,
) -> Result<(PipelineReport, PipelineReport), KeyRateError> {
    let fine_pair = pair.resampled(dt_fine_ps)?;
    let coarse_pair = pair.resampled(dt_coarse_ps)?;
    let fine = key_rate_report(&fine_pair, receiver, inputs, qber_threshold)?;
    let coarse = key_rate_report(&coarse_pair, receiver, inputs, qber_threshold)?;
    Ok((fine, coarse))
}

/// Per-mode filtering bounds entering the loss sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeBounds {
    pub p_succ: f64,
    pub e_phase: f64,
}

/// Channel/detector model for the rate-vs-loss sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSweepConfig {
    pub loss_grid_db: Vec<f64>,
    pub detector_efficiency: f64,
    /// Total dark-count probability per gate summed over both detectors.
    pub dark_prob_total: f64,
    /// Error probability of a signal detection at zero loss.
    pub e_optical: f64,
}

/// One row of the rate-vs-loss sweep, in secret bits per sent photon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub loss_db: f64,
    pub rate_ideal: f64,
    pub rate_two_state: f64,
    pub rate_four_state: f64,
}

/// Asymptotic rate against channel loss for the ideal receiver and the
/// two demodulation modes.
///
/// Per loss point the signal detection probability is
/// `10^(-loss/10) * detector_efficiency`; dark counts contribute half as
/// errors, raising the observed bit error toward 1/2 and eventually
/// cutting the rate to zero. Each mode keeps its fixed `(p_succ, e_phase)`
/// bounds; the ideal column uses `(1, e_phase_obs)`.
pub fn rate_vs_loss(
    inputs: &KeyRateInputs,
    two_state: ModeBounds,
    four_state: ModeBounds,
    cfg: &LossSweepConfig,
) -> Vec<LossPoint> {
    let ideal = ModeBounds {
        p_succ: 1.0,
        e_phase: inputs.e_phase_obs,
    };
    cfg.loss_grid_db
        .iter()
        .map(|&loss_db| {
            let p_sig = 10f64.powf(-loss_db / 10.0) * cfg.detector_efficiency;
            let p_det = p_sig + cfg.dark_prob_total;
            let e_obs = (cfg.e_optical * p_sig + 0.5 * cfg.dark_prob_total) / p_det;
            let rate =
                |m: ModeBounds| p_det * secret_key_rate(m.p_succ, m.e_phase, e_obs, inputs.f_ec);
            LossPoint {
                loss_db,
                rate_ideal: rate(ideal),
                rate_two_state: rate(two_state),
                rate_four_state: rate(four_state),
            }
        })
        .collect()
}

/// Dense two-phase simplex for small equality-form LPs.
mod simplex {
    pub struct Solution {
        pub objective: f64,
        #[allow(dead_code)]
        pub x: Vec<f64>,
        pub iterations: usize,
    }

    const EPS: f64 = 1e-10;

    /// Minimize `c.x` subject to `rows.x = rhs`, `x >= 0`.
    /// Returns `None` when infeasible. Bland's rule keeps it from cycling.
    pub fn solve(c: &[f64], rows: &[Vec<f64>], rhs: &[f64]) -> Option<Solution> {
        let m = rows.len();
        let n = c.len();
        debug_assert!(rows.iter().all(|r| r.len() == n) && rhs.len() == m);

        // Tableau over n structural + m artificial columns, plus the rhs.
        let width = n + m + 1;
        let mut t = vec![vec![0.0f64; width]; m];
        for (i, row) in rows.iter().enumerate() {
            let flip = if rhs[i] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                t[i][j] = flip * row[j];
            }
            t[i][n + i] = 1.0;
            t[i][width - 1] = flip * rhs[i];
        }
        let mut basis: Vec<usize> = (n..n + m).collect();
        let mut iterations = 0;

        // Phase 1: minimize the sum of artificials.
        let phase1_cost: Vec<f64> = (0..n + m).map(|j| if j >= n { 1.0 } else { 0.0 }).collect();
        run_phase(&mut t, &mut basis, &phase1_cost, n + m, &mut iterations);
        let infeasibility: f64 = basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| b >= n)
            .map(|(i, _)| t[i][width - 1])
            .sum();
        if infeasibility > 1e-7 {
            return None;
        }

        // Drive any degenerate artificials out of the basis.
        for i in 0..m {
            if basis[i] >= n {
                if let Some(j) = (0..n).find(|&j| t[i][j].abs() > EPS) {
                    pivot(&mut t, &mut basis, i, j);
                    iterations += 1;
                }
            }
        }

        // Phase 2 over structural columns only.
        let mut phase2_cost = c.to_vec();
        phase2_cost.extend(std::iter::repeat_n(f64::INFINITY, m));
        run_phase(&mut t, &mut basis, &phase2_cost, n, &mut iterations);

        let mut x = vec![0.0; n];
        for (i, &b) in basis.iter().enumerate() {
            if b < n {
                x[b] = t[i][width - 1];
            }
        }
        let objective = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();
        Some(Solution {
            objective,
            x,
            iterations,
        })
    }

    fn run_phase(
        t: &mut [Vec<f64>],
        basis: &mut [usize],
        cost: &[f64],
        n_enterable: usize,
        iterations: &mut usize,
    ) {
        let m = t.len();
        let width = t[0].len();
        loop {
            // Reduced costs: c_j - c_B . B^-1 A_j (computed row-wise).
            let entering = (0..n_enterable)
                .filter(|&j| !basis.contains(&j))
                .find(|&j| {
                    let mut reduced = cost[j];
                    for i in 0..m {
                        reduced -= cost[basis[i]] * t[i][j];
                    }
                    reduced < -EPS
                });
            let Some(j) = entering else { break };

            // Ratio test, Bland tie-break on the leaving row's basis index.
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                if t[i][j] > EPS {
                    let ratio = t[i][width - 1] / t[i][j];
                    let replace = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr - EPS || ((ratio - lr).abs() <= EPS && basis[i] < basis[li])
                        }
                    };
                    if replace {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((i, _)) = leave else { break }; // unbounded; not reachable here
            pivot(t, basis, i, j);
            *iterations += 1;
        }
    }

    fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
        let p = t[row][col];
        for v in t[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = t[row].clone();
        for (i, r) in t.iter_mut().enumerate() {
            if i != row && r[col].abs() > 0.0 {
                let f = r[col];
                for (v, p) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
        basis[row] = col;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::fixtures;
    use crate::protocol::DriveWaveform;
    use proptest::prelude::*;

    #[test]
    fn binary_entropy_reference_points() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.5) - 1.0).abs() < 1e-15);
        assert!((binary_entropy(0.03) - 0.19439).abs() < 1e-5);
    }

    #[test]
    fn static_prefactor_values() {
        assert_eq!(static_prefactor(0.3, 0.3), 0.5);
        assert!((static_prefactor(0.2, 0.1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(static_prefactor(0.2, 0.1), static_prefactor(0.1, 0.2));
    }

    #[test]
    fn procrustean_success_values() {
        assert_eq!(procrustean_success(0.2, 0.2).unwrap(), 1.0);
        assert!((procrustean_success(0.2, 0.1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            procrustean_success(0.0, 0.0),
            Err(KeyRateError::DeadBin)
        ));
    }

    #[test]
    fn key_rate_reference_values() {
        // Ideal case and the four two-state/four-state rows at both
        // resolutions, all to +-0.001.
        let cases = [
            (1.0, 0.03, 0.592),
            (0.609, 0.0475, 0.227),
            (0.981, 0.0302, 0.575),
            (0.608, 0.0470, 0.228),
            (0.979, 0.0303, 0.574),
        ];
        for (p_succ, e_phase, expected) in cases {
            let r = secret_key_rate(p_succ, e_phase, 0.03, 1.10);
            assert!(
                (r - expected).abs() <= 0.001,
                "R({p_succ}, {e_phase}) = {r}, expected {expected}"
            );
        }
    }

    #[test]
    fn analytic_phase_bound_values() {
        assert_eq!(analytic_phase_bound(1.0, 0.03), 0.03);
        let e = analytic_phase_bound(0.609, 0.03);
        assert!((e - 0.0493).abs() < 1e-4);
        let r = secret_key_rate(0.609, e, 0.03, 1.10);
        assert!((r - 0.223).abs() < 1e-3);
        // Conservative versus the tighter published-style bound.
        assert!(r <= 0.227 && 0.227 - r < 0.005);
        assert_eq!(analytic_phase_bound(0.0, 0.03), 0.5);
        assert_eq!(analytic_phase_bound(0.01, 0.03), 0.5);
    }

    fn toy_problem(p: Vec<f64>, e: Vec<f64>) -> BinProblem {
        let shifts = (0..p.len()).map(|i| i as f64).collect();
        BinProblem {
            shifts_ps: shifts,
            p_succ: p,
            e_bit: e,
        }
    }

    #[test]
    fn optimize_bounds_matched_curves() {
        // No mismatch: p(t) = 1 everywhere, so p_succ = 1 and
        // e_phase = e_phase_obs regardless of the error profile.
        let problem = toy_problem(vec![1.0; 5], vec![0.01, 0.02, 0.03, 0.05, 0.08]);
        let inputs = KeyRateInputs::default();
        let b = optimize_bounds(&inputs, &problem).unwrap();
        assert!((b.p_succ_min - 1.0).abs() < 1e-9);
        assert!((b.e_phase_max - 0.03).abs() < 1e-9);
    }

    #[test]
    fn optimize_bounds_single_bin() {
        let problem = toy_problem(vec![0.7], vec![0.03]);
        let b = optimize_bounds(&KeyRateInputs::default(), &problem).unwrap();
        assert!((b.p_succ_min - 0.7).abs() < 1e-9);
    }

    #[test]
    fn optimize_bounds_two_bin_mixture() {
        // e_obs = 0.03 sits between the bins' 0.01 and 0.05, so the
        // attacker mixes them 50/50: p_succ = (0.9 + 0.3) / 2.
        let problem = toy_problem(vec![0.9, 0.3], vec![0.01, 0.05]);
        let b = optimize_bounds(&KeyRateInputs::default(), &problem).unwrap();
        assert!((b.p_succ_min - 0.6).abs() < 1e-9, "{}", b.p_succ_min);
    }

    #[test]
    fn optimize_bounds_detects_infeasible_observation() {
        let problem = toy_problem(vec![0.9, 0.3], vec![0.05, 0.08]);
        let inputs = KeyRateInputs {
            e_bit_obs: 0.03,
            ..Default::default()
        };
        assert!(matches!(
            optimize_bounds(&inputs, &problem),
            Err(KeyRateError::InfeasibleObservation { .. })
        ));
    }

    #[test]
    fn worst_bin_is_never_tighter() {
        let problem = toy_problem(vec![0.9, 0.5, 0.7, 0.95], vec![0.01, 0.02, 0.04, 0.06]);
        let inputs = KeyRateInputs::default();
        let lp = optimize_bounds(&inputs, &problem).unwrap();
        let coarse = worst_bin_bounds(&inputs, &problem);
        assert!(coarse.p_succ_min <= lp.p_succ_min + 1e-12);
        assert!(coarse.e_phase_max >= lp.e_phase_max - 1e-12);
    }

    fn droop_receiver(mode: DemodMode, period: f64) -> ReceiverConfig {
        ReceiverConfig::new(mode, period)
            .with_waveform(DriveWaveform::raised_cosine(300.0, 120.0, period))
    }

    #[test]
    fn pipeline_four_state_recovers_the_ideal_rate() {
        // Logical curves are identical by construction, so filtering always
        // succeeds and the report collapses to the ideal rate at the
        // system's own observed error.
        let pair = fixtures::severe_mismatch(4.5, 220);
        let receiver = droop_receiver(DemodMode::FourState, 990.0);
        let inputs = KeyRateInputs::observed(&pair, &receiver, 1.10).unwrap();
        let out = key_rate_report(&pair, &receiver, &inputs, 0.11).unwrap();
        assert!((out.report.p_succ - 1.0).abs() < 1e-9);
        let ideal = secret_key_rate(1.0, inputs.e_phase_obs, inputs.e_bit_obs, inputs.f_ec);
        assert!((out.report.rate - ideal).abs() < 1e-12);
        assert!((out.report.rate - 0.592).abs() < 0.002);
    }

    #[test]
    fn pipeline_two_state_pays_for_mismatch() {
        let pair = fixtures::severe_mismatch(4.5, 220);
        let receiver = droop_receiver(DemodMode::TwoState, 990.0);
        let inputs = KeyRateInputs::observed(&pair, &receiver, 1.10).unwrap();
        let out = key_rate_report(&pair, &receiver, &inputs, 0.11).unwrap();
        assert!(out.report.p_succ < 1.0);
        assert!(out.report.e_phase > inputs.e_phase_obs);
        assert!(out.report.rate < 0.592);
        assert!(out.feasible_bins > 0);
    }

    #[test]
    fn resolution_comparison_identity_at_same_dt() {
        let pair = fixtures::severe_mismatch(4.5, 220);
        let receiver = droop_receiver(DemodMode::TwoState, 990.0);
        let inputs = KeyRateInputs::observed(&pair, &receiver, 1.10).unwrap();
        let (fine, coarse) =
            resolution_comparison(&pair, &receiver, 4.5, 4.5, &inputs, 0.11).unwrap();
        assert_eq!(fine, coarse);
    }

    #[test]
    fn loss_sweep_composition_at_zero_loss_no_darks() {
        let inputs = KeyRateInputs::default();
        let cfg = LossSweepConfig {
            loss_grid_db: vec![0.0],
            detector_efficiency: 0.2,
            dark_prob_total: 0.0,
            e_optical: 0.03,
        };
        let bounds = ModeBounds {
            p_succ: 1.0,
            e_phase: 0.03,
        };
        let points = rate_vs_loss(&inputs, bounds, bounds, &cfg);
        let per_detected = secret_key_rate(1.0, 0.03, 0.03, 1.10);
        assert!((points[0].rate_ideal - 0.2 * per_detected).abs() < 1e-12);
    }

    #[test]
    fn loss_sweep_monotone_with_cutoff() {
        let inputs = KeyRateInputs::default();
        let cfg = LossSweepConfig {
            loss_grid_db: (0..=60).map(|l| l as f64).collect(),
            detector_efficiency: 0.2,
            dark_prob_total: 2e-5,
            e_optical: 0.03,
        };
        let points = rate_vs_loss(
            &inputs,
            ModeBounds {
                p_succ: 0.609,
                e_phase: 0.0475,
            },
            ModeBounds {
                p_succ: 0.981,
                e_phase: 0.0302,
            },
            &cfg,
        );
        for w in points.windows(2) {
            assert!(w[1].rate_ideal <= w[0].rate_ideal + 1e-15);
            assert!(w[1].rate_two_state <= w[0].rate_two_state + 1e-15);
            assert!(w[1].rate_four_state <= w[0].rate_four_state + 1e-15);
        }
        assert!(points[0].rate_ideal > 0.0);
        assert_eq!(points.last().unwrap().rate_ideal, 0.0);
    }

    proptest! {
        #[test]
        fn rate_monotonicity(
            p in 0.0f64..=1.0,
            dp in 0.0f64..=0.2,
            e_ph in 0.0f64..=0.45,
            de in 0.0f64..=0.05,
            e_bit in 0.0f64..=0.45,
        ) {
            let base = secret_key_rate(p, e_ph, e_bit, 1.10);
            // Nondecreasing in p_succ.
            prop_assert!(secret_key_rate((p + dp).min(1.0), e_ph, e_bit, 1.10) >= base - 1e-12);
            // Nonincreasing in e_phase and e_bit.
            prop_assert!(secret_key_rate(p, e_ph + de, e_bit, 1.10) <= base + 1e-12);
            prop_assert!(secret_key_rate(p, e_ph, e_bit + de, 1.10) <= base + 1e-12);
            // Never negative.
            prop_assert!(base >= 0.0);
        }

        #[test]
        fn procrustean_is_twice_the_static_prefactor(
            eta0 in 1e-6f64..=1.0,
            eta1 in 1e-6f64..=1.0,
        ) {
            let p = procrustean_success(eta0, eta1).unwrap();
            let prefactor = static_prefactor(eta0, eta1);
            prop_assert!((p - 2.0 * prefactor).abs() < 1e-15);
        }
    }
}
