//! Independent brute-force validators.
//!
//! Each function here recomputes a quantity the production code derives in
//! closed form or via a solver, using the dumbest correct method available:
//! full outcome enumeration for the click model, exhaustive vertex
//! enumeration for the bound LP. They deliberately share no code with the
//! implementations they check, and back both the test suite and the CLI
//! `oracle` subcommand.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::keyrate::{analytic_phase_bound, BinProblem, KeyRateInputs};
use crate::protocol::ClickProbabilities;

/// Click outcome distribution by enumerating every atomic outcome of the
/// four independent random events: photon route, photon detection, and the
/// two dark counts.
pub fn click_probability_oracle(
    phi_a: f64,
    phi_b_eff: f64,
    visibility: f64,
    eta0: f64,
    eta1: f64,
    dark0: f64,
    dark1: f64,
) -> ClickProbabilities {
    let r0 = 0.5 * (1.0 + visibility * (phi_a + phi_b_eff).cos());
    let mut acc = [0.0f64; 4]; // [only0, only1, both, none]

    for route in 0..2usize {
        for detected in [false, true] {
            for dark0_fired in [false, true] {
                for dark1_fired in [false, true] {
                    let p_route = if route == 0 { r0 } else { 1.0 - r0 };
                    let eta = if route == 0 { eta0 } else { eta1 };
                    let p_detect = if detected { eta } else { 1.0 - eta };
                    let p_d0 = if dark0_fired { dark0 } else { 1.0 - dark0 };
                    let p_d1 = if dark1_fired { dark1 } else { 1.0 - dark1 };
                    let p = p_route * p_detect * p_d0 * p_d1;

                    let click0 = dark0_fired || (detected && route == 0);
                    let click1 = dark1_fired || (detected && route == 1);
                    let idx = match (click0, click1) {
                        (true, false) => 0,
                        (false, true) => 1,
                        (true, true) => 2,
                        (false, false) => 3,
                    };
                    acc[idx] += p;
                }
            }
        }
    }

    ClickProbabilities {
        p_det0: acc[0],
        p_det1: acc[1],
        p_both: acc[2],
        p_none: acc[3],
    }
}

/// Exhaustive vertex enumeration for the attacker's bound LP.
///
/// A standard-form LP with the two constraints `sum q = 1` and
/// `sum q e = e_obs` has optimal vertices supported on at most two bins,
/// so scanning all singletons and pairs is exact. Returns `None` when no
/// vertex is feasible.
pub fn vertex_bounds(inputs: &KeyRateInputs, problem: &BinProblem) -> Option<(f64, f64)> {
    let n = problem.len();
    let e_obs = inputs.e_bit_obs;
    let tol = 1e-9 * e_obs.abs().max(1.0);
    let mut best: Option<f64> = None;
    let mut consider = |value: f64| {
        best = Some(match best {
            None => value,
            Some(b) => b.min(value),
        });
    };

    for i in 0..n {
        if (problem.e_bit[i] - e_obs).abs() <= tol {
            consider(problem.p_succ[i]);
        }
        for j in (i + 1)..n {
            let (ei, ej) = (problem.e_bit[i], problem.e_bit[j]);
            if (ei - e_obs) * (ej - e_obs) > 0.0 || (ei - ej).abs() <= f64::EPSILON {
                continue;
            }
            let qi = (ej - e_obs) / (ej - ei);
            if !(0.0..=1.0).contains(&qi) {
                continue;
            }
            consider(qi * problem.p_succ[i] + (1.0 - qi) * problem.p_succ[j]);
        }
    }

    best.map(|p| (p, analytic_phase_bound(p, inputs.e_phase_obs)))
}

/// Result of one validator run.
#[derive(Debug, Clone, Serialize)]
pub struct ValidatorResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Run the brute-force validators against the production implementations
/// on `instances` random cases each.
pub fn run_all(seed: u64, instances: usize) -> Vec<ValidatorResult> {
    vec![
        validate_click_probabilities(seed, instances),
        validate_lp_against_vertices(seed ^ 0x5bd1_e995, instances),
        validate_conservativity_chain(seed ^ 0x9e37_79b9, instances),
    ]
}

fn validate_click_probabilities(seed: u64, instances: usize) -> ValidatorResult {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut max_dev = 0.0f64;
    for _ in 0..instances {
        let phi_a = rng.random_range(0.0..std::f64::consts::TAU);
        let phi_b = rng.random_range(0.0..std::f64::consts::TAU);
        let v = rng.random_range(0.0..=1.0);
        let eta0 = rng.random_range(0.0..=1.0);
        let eta1 = rng.random_range(0.0..=1.0);
        let d0 = rng.random_range(0.0..0.2);
        let d1 = rng.random_range(0.0..0.2);
        let got =
            crate::protocol::click_probabilities(phi_a, phi_b, v, eta0, eta1, d0, d1).unwrap();
        let want = click_probability_oracle(phi_a, phi_b, v, eta0, eta1, d0, d1);
        for (a, b) in [
            (got.p_det0, want.p_det0),
            (got.p_det1, want.p_det1),
            (got.p_both, want.p_both),
            (got.p_none, want.p_none),
        ] {
            max_dev = max_dev.max((a - b).abs());
        }
        let total = got.p_det0 + got.p_det1 + got.p_both + got.p_none;
        max_dev = max_dev.max((total - 1.0).abs());
    }
    let tolerance = 1e-12;
    ValidatorResult {
        name: "click-probabilities-vs-enumeration",
        instances,
        max_deviation: max_dev,
        tolerance,
        pass: max_dev <= tolerance,
    }
}

/// Random small bin problem with the observed error inside the feasible
/// error range.
pub fn random_small_problem(rng: &mut ChaCha12Rng, max_bins: usize) -> (KeyRateInputs, BinProblem) {
    let n = rng.random_range(1..=max_bins);
    let mut p = Vec::with_capacity(n);
    let mut e = Vec::with_capacity(n);
    for _ in 0..n {
        p.push(rng.random_range(0.0..=1.0));
        e.push(rng.random_range(0.0..=0.11));
    }
    let (lo, hi) = e
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    let e_obs = lo + rng.random_range(0.0..=1.0) * (hi - lo);
    let inputs = KeyRateInputs {
        e_bit_obs: e_obs,
        e_phase_obs: 0.03,
        f_ec: 1.10,
    };
    let shifts = (0..n).map(|i| i as f64).collect();
    (
        inputs,
        BinProblem {
            shifts_ps: shifts,
            p_succ: p,
            e_bit: e,
        },
    )
}

fn validate_lp_against_vertices(seed: u64, instances: usize) -> ValidatorResult {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut max_dev = 0.0f64;
    for _ in 0..instances {
        let (inputs, problem) = random_small_problem(&mut rng, 8);
        let lp = crate::keyrate::optimize_bounds(&inputs, &problem).unwrap();
        let (p_vertex, e_vertex) = vertex_bounds(&inputs, &problem).expect("feasible");
        max_dev = max_dev.max((lp.p_succ_min - p_vertex).abs());
        max_dev = max_dev.max((lp.e_phase_max - e_vertex).abs());
    }
    let tolerance = 1e-6;
    ValidatorResult {
        name: "lp-vs-vertex-enumeration",
        instances,
        max_deviation: max_dev,
        tolerance,
        pass: max_dev <= tolerance,
    }
}

fn validate_conservativity_chain(seed: u64, instances: usize) -> ValidatorResult {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // Deviation is how far any rate steps out of the required ordering
    // worst-bin R <= LP R <= ideal R.
    let mut max_violation = 0.0f64;
    for _ in 0..instances {
        let (inputs, problem) = random_small_problem(&mut rng, 8);
        let lp = crate::keyrate::optimize_bounds(&inputs, &problem).unwrap();
        let coarse = crate::keyrate::worst_bin_bounds(&inputs, &problem);
        let rate = |b: &crate::keyrate::OptimizedBounds| {
            crate::keyrate::secret_key_rate(
                b.p_succ_min,
                b.e_phase_max,
                inputs.e_bit_obs,
                inputs.f_ec,
            )
        };
        let r_coarse = rate(&coarse);
        let r_lp = rate(&lp);
        let r_ideal =
            crate::keyrate::secret_key_rate(1.0, inputs.e_phase_obs, inputs.e_bit_obs, inputs.f_ec);
        max_violation = max_violation.max(r_coarse - r_lp).max(r_lp - r_ideal);
    }
    let tolerance = 1e-9;
    ValidatorResult {
        name: "conservativity-chain",
        instances,
        max_deviation: max_violation.max(0.0),
        tolerance,
        pass: max_violation <= tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_agrees_on_extreme_cases() {
        let p = click_probability_oracle(0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0);
        assert!((p.p_det0 - 1.0).abs() < 1e-15);
        let p = click_probability_oracle(0.0, std::f64::consts::FRAC_PI_2, 1.0, 0.5, 0.5, 0.0, 0.0);
        assert!((p.p_det0 - 0.25).abs() < 1e-15);
        assert!((p.p_det1 - 0.25).abs() < 1e-15);
        assert!((p.p_none - 0.5).abs() < 1e-15);
    }

    #[test]
    fn all_validators_pass() {
        for result in run_all(2024, 300) {
            assert!(
                result.pass,
                "{} deviated by {} (tolerance {})",
                result.name, result.max_deviation, result.tolerance
            );
        }
    }
}
