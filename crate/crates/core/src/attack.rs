//! Eve's time-shift attack: per-pulse shift selection, characterization
//! sweeps, and the exhaustive search for her best shift pair.
//!
//! Eve sits in the channel with an optical switch between a shorter and a
//! longer path, so each pulse arrives early or late by a fixed amount of
//! her choosing. She never touches Alice's encoding; only the arrival time
//! changes. Her information is evaluated analytically from the click
//! model, with Monte Carlo used as validation.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::DetectorPair;
use crate::protocol::{analytic_point, run_session, ProtocolError, ReceiverConfig};
use crate::stats::{mi_from_joint, CountsSummary};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("shift grid is empty")]
    EmptyGrid,
    #[error("QBER cap {0} must lie in (0, 0.5)")]
    BadQberCap(f64),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// What Eve does with each pulse's timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EveKind {
    /// Passive channel.
    None,
    /// Every pulse delayed or advanced by the same amount.
    FixedShift { delta_ps: f64 },
    /// Each pulse shifted by `t1_ps` with probability `p1`, else `t2_ps`.
    TwoPoint { t1_ps: f64, t2_ps: f64, p1: f64 },
}

/// Eve's channel strategy: a shift rule plus the channel transmittance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EveStrategy {
    #[serde(flatten)]
    pub kind: EveKind,
    pub channel_transmittance: f64,
}

impl EveStrategy {
    pub fn none() -> Self {
        Self {
            kind: EveKind::None,
            channel_transmittance: 1.0,
        }
    }

    pub fn fixed(delta_ps: f64) -> Self {
        Self {
            kind: EveKind::FixedShift { delta_ps },
            channel_transmittance: 1.0,
        }
    }

    pub fn two_point(t1_ps: f64, t2_ps: f64, p1: f64) -> Self {
        Self {
            kind: EveKind::TwoPoint { t1_ps, t2_ps, p1 },
            channel_transmittance: 1.0,
        }
    }

    /// The strategy's shift values with their probabilities.
    pub fn shift_labels(&self) -> Vec<(f64, f64)> {
        match self.kind {
            EveKind::None => vec![(0.0, 1.0)],
            EveKind::FixedShift { delta_ps } => vec![(delta_ps, 1.0)],
            EveKind::TwoPoint { t1_ps, t2_ps, p1 } => {
                vec![(t1_ps, p1), (t2_ps, 1.0 - p1)]
            }
        }
    }

    /// Validate shifts against the detector grid and resolve bin offsets.
    pub(crate) fn shift_table(
        &self,
        pair: &DetectorPair,
    ) -> Result<Vec<(f64, i64)>, ProtocolError> {
        if let EveKind::TwoPoint { p1, .. } = self.kind {
            if !(0.0..=1.0).contains(&p1) {
                return Err(ProtocolError::BadStrategy(format!(
                    "two-point probability p1 = {p1} is outside [0, 1]"
                )));
            }
        }
        self.shift_labels()
            .iter()
            .map(|&(shift, _)| {
                let bins = pair
                    .apd0
                    .bins_for_shift(shift)
                    .map_err(|_| ProtocolError::MisalignedShift(shift))?;
                Ok((shift, bins))
            })
            .collect()
    }

    /// Pick this pulse's shift: index into the shift table plus the value.
    pub(crate) fn pick_shift<R: Rng>(&self, table: &[(f64, i64)], rng: &mut R) -> (usize, f64) {
        match self.kind {
            EveKind::None | EveKind::FixedShift { .. } => (0, table[0].0),
            EveKind::TwoPoint { p1, .. } => {
                if p1 >= 1.0 || (p1 > 0.0 && rng.random_bool(p1)) {
                    (0, table[0].0)
                } else {
                    (1, table[1].0)
                }
            }
        }
    }
}

/// Sample the channel for one pulse: the shift Eve applies and whether the
/// pulse survives the channel loss.
pub fn apply_channel<R: Rng>(strategy: &EveStrategy, rng: &mut R) -> (f64, bool) {
    let shift = match strategy.kind {
        EveKind::None => 0.0,
        EveKind::FixedShift { delta_ps } => delta_ps,
        EveKind::TwoPoint { t1_ps, t2_ps, p1 } => {
            if p1 >= 1.0 || (p1 > 0.0 && rng.random_bool(p1)) {
                t1_ps
            } else {
                t2_ps
            }
        }
    };
    let tau = strategy.channel_transmittance;
    let transmitted = tau >= 1.0 || rng.random_bool(tau);
    (shift, transmitted)
}

/// One row of a characterization sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub shift_ps: f64,
    pub counts: CountsSummary,
}

/// Symmetric sweep grid: every multiple of `step_ps` whose magnitude stays
/// within half of `span_ps`, in ascending order.
pub fn sweep_grid(step_ps: f64, span_ps: f64) -> Vec<f64> {
    let k_max = (span_ps / 2.0 / step_ps).floor() as i64;
    (-k_max..=k_max).map(|k| k as f64 * step_ps).collect()
}

/// Run a fixed-shift session at every grid point.
///
/// Points evaluate in parallel with seeds derived from `(seed, index)`, so
/// the output is deterministic regardless of scheduling.
pub fn sweep_characterization(
    pair: &DetectorPair,
    receiver: &ReceiverConfig,
    shifts: &[f64],
    n_pulses_per_point: u64,
    seed: u64,
) -> Result<Vec<SweepPoint>, AttackError> {
    if shifts.is_empty() {
        return Err(AttackError::EmptyGrid);
    }
    shifts
        .par_iter()
        .enumerate()
        .map(|(idx, &shift_ps)| {
            let mut rng = ChaCha12Rng::seed_from_u64(point_seed(seed, idx));
            let counts = run_session(
                pair,
                receiver,
                &EveStrategy::fixed(shift_ps),
                n_pulses_per_point,
                &mut rng,
            )?;
            Ok(SweepPoint { shift_ps, counts })
        })
        .collect()
}

/// Seed for sweep point `idx` derived from the session seed.
pub fn point_seed(seed: u64, idx: usize) -> u64 {
    seed.wrapping_add((idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Eve's optimized two-point attack against a receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftPairChoice {
    pub t1_ps: f64,
    pub t2_ps: f64,
    pub p1: f64,
    /// Her information about the logical bit, in bits per sifted pulse.
    pub eve_info_bits: f64,
    /// Average QBER Alice and Bob would observe under this strategy.
    pub predicted_qber: f64,
}

/// Exhaustive search over shift pairs and a coarse `p1` grid for the
/// strategy maximizing Eve's information, subject to the predicted average
/// QBER staying at or below `qber_cap`.
///
/// The inner evaluation is the exact analytic model, so the search itself
/// is the oracle. Ties break toward the smallest `(t1, t2, p1)`. Returns
/// `None` when no pair on the grid satisfies the cap (no viable attack).
pub fn optimize_shift_pair(
    pair: &DetectorPair,
    receiver: &ReceiverConfig,
    qber_cap: f64,
    grid: &[f64],
) -> Result<Option<ShiftPairChoice>, AttackError> {
    if !(0.0..0.5).contains(&qber_cap) || qber_cap == 0.0 {
        return Err(AttackError::BadQberCap(qber_cap));
    }
    if grid.is_empty() {
        return Err(AttackError::EmptyGrid);
    }

    let points = grid
        .iter()
        .map(|&s| analytic_point(pair, receiver, s, 1.0))
        .collect::<Result<Vec<_>, _>>()?;

    let mut best: Option<ShiftPairChoice> = None;
    for i in 0..points.len() {
        for j in i..points.len() {
            let (a, b) = (&points[i], &points[j]);
            let mut p1_grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
            // The split that equalizes detection rates between the two
            // shifts, keeping the sifted key statistically balanced.
            if a.p_sifted + b.p_sifted > 0.0 {
                p1_grid.push(b.p_sifted / (a.p_sifted + b.p_sifted));
            }
            for p1 in p1_grid {
                let sift = p1 * a.p_sifted + (1.0 - p1) * b.p_sifted;
                if sift <= 0.0 {
                    continue;
                }
                let qber = (p1 * a.p_error + (1.0 - p1) * b.p_error) / sift;
                if qber > qber_cap {
                    continue;
                }
                let joint = [
                    scale_cell(&a.p_basis_bit, p1),
                    scale_cell(&b.p_basis_bit, 1.0 - p1),
                ];
                let Some(info) = mi_from_joint(&joint) else {
                    continue;
                };
                let candidate = ShiftPairChoice {
                    t1_ps: grid[i],
                    t2_ps: grid[j],
                    p1,
                    eve_info_bits: info,
                    predicted_qber: qber,
                };
                let better = match &best {
                    None => true,
                    Some(cur) => {
                        info > cur.eve_info_bits + 1e-15
                            || ((info - cur.eve_info_bits).abs() <= 1e-15
                                && (candidate.t1_ps, candidate.t2_ps, candidate.p1)
                                    < (cur.t1_ps, cur.t2_ps, cur.p1))
                    }
                };
                if better {
                    best = Some(candidate);
                }
            }
        }
    }
    Ok(best)
}

fn scale_cell(cell: &[[f64; 2]; 2], w: f64) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for b in 0..2 {
        for l in 0..2 {
            out[b][l] = w * cell[b][l];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::fixtures;
    use crate::protocol::{run_session_with_sink, AliceChoice, DemodMode, DriveWaveform};
    use crate::stats;

    fn droop_receiver(mode: DemodMode) -> ReceiverConfig {
        ReceiverConfig::new(mode, 999.0)
            .with_waveform(DriveWaveform::raised_cosine(300.0, 120.0, 999.0))
    }

    #[test]
    fn apply_channel_edge_cases() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let none = EveStrategy::none();
        for _ in 0..100 {
            let (shift, transmitted) = apply_channel(&none, &mut rng);
            assert_eq!(shift, 0.0);
            assert!(transmitted);
        }
        let always_t1 = EveStrategy::two_point(-13.5, 27.0, 1.0);
        for _ in 0..100 {
            assert_eq!(apply_channel(&always_t1, &mut rng).0, -13.5);
        }
        let lossy = EveStrategy {
            channel_transmittance: 0.25,
            ..EveStrategy::fixed(4.5)
        };
        let survived = (0..10_000)
            .filter(|_| apply_channel(&lossy, &mut rng).1)
            .count();
        assert!((survived as f64 - 2500.0).abs() < 4.0 * (10_000.0f64 * 0.25 * 0.75).sqrt());
    }

    #[test]
    fn sweep_grid_counts() {
        assert_eq!(sweep_grid(4.5, 999.0).len(), 223);
        let grid = sweep_grid(4.5, 999.0);
        assert_eq!(grid[0], -499.5);
        assert_eq!(grid[222], 499.5);
        assert_eq!(grid[111], 0.0);
        assert_eq!(sweep_grid(49.5, 990.0).len(), 21);
    }

    #[test]
    fn sweep_is_deterministic_and_consistent() {
        let pair = fixtures::severe_mismatch(4.5, 222);
        let receiver = droop_receiver(DemodMode::TwoState);
        let shifts: Vec<f64> = (-3..=3).map(|k| k as f64 * 13.5).collect();
        let a = sweep_characterization(&pair, &receiver, &shifts, 20_000, 7).unwrap();
        let b = sweep_characterization(&pair, &receiver, &shifts, 20_000, 7).unwrap();
        assert_eq!(a, b);
        for point in &a {
            point.counts.validate().unwrap();
        }
    }

    #[test]
    fn matched_detectors_show_no_bias() {
        let pair = fixtures::matched(4.5, 222, 0.2, 1e-5);
        let receiver = droop_receiver(DemodMode::TwoState);
        let shifts: Vec<f64> = (-5..=5).map(|k| k as f64 * 22.5).collect();
        let sweep = sweep_characterization(&pair, &receiver, &shifts, 200_000, 21).unwrap();
        for point in sweep {
            let bias = stats::bias_contrast(&point.counts).unwrap();
            let sigma = stats::bias_sigma(point.counts.c0, point.counts.c1);
            assert!(
                bias.abs() < 3.0 * sigma,
                "bias {bias} at shift {} exceeds 3 sigma {sigma}",
                point.shift_ps
            );
        }
    }

    #[test]
    fn optimizer_matched_curves_find_nothing_worthwhile() {
        let pair = fixtures::matched(4.5, 222, 0.2, 1e-5);
        let receiver = droop_receiver(DemodMode::TwoState);
        let grid = sweep_grid(13.5, 999.0);
        let choice = optimize_shift_pair(&pair, &receiver, 0.11, &grid)
            .unwrap()
            .expect("feasible pairs exist");
        assert!(choice.eve_info_bits < 1e-9, "info {}", choice.eve_info_bits);
        assert!(choice.predicted_qber <= 0.11);
    }

    #[test]
    fn optimizer_exploits_severe_mismatch_in_two_state() {
        let pair = fixtures::severe_mismatch(4.5, 222);
        let receiver = droop_receiver(DemodMode::TwoState);
        let grid = sweep_grid(4.5, 999.0);
        let choice = optimize_shift_pair(&pair, &receiver, 0.11, &grid)
            .unwrap()
            .expect("attack exists");
        assert!(
            choice.eve_info_bits > 0.1,
            "expected > 0.1 bits, got {}",
            choice.eve_info_bits
        );
        assert!(choice.predicted_qber <= 0.11);
        assert!(choice.t1_ps < choice.t2_ps);
    }

    #[test]
    fn optimizer_defeated_by_four_state() {
        let pair = fixtures::severe_mismatch(4.5, 222);
        let receiver = droop_receiver(DemodMode::FourState);
        let grid = sweep_grid(13.5, 999.0);
        let choice = optimize_shift_pair(&pair, &receiver, 0.11, &grid)
            .unwrap()
            .expect("feasible pairs exist");
        assert!(choice.eve_info_bits < 1e-3, "info {}", choice.eve_info_bits);
    }

    #[test]
    fn optimizer_rejects_bad_caps() {
        let pair = fixtures::severe_mismatch(4.5, 222);
        let receiver = droop_receiver(DemodMode::TwoState);
        assert!(matches!(
            optimize_shift_pair(&pair, &receiver, 0.0, &[0.0]),
            Err(AttackError::BadQberCap(_))
        ));
        assert!(matches!(
            optimize_shift_pair(&pair, &receiver, 0.6, &[0.0]),
            Err(AttackError::BadQberCap(_))
        ));
    }

    #[test]
    fn shifting_leaves_alice_preparation_untouched() {
        // The channel only retimes pulses; Alice's states stay uniform at
        // every shift value Eve uses.
        let pair = fixtures::severe_mismatch(4.5, 222);
        let receiver = droop_receiver(DemodMode::TwoState);
        let eve = EveStrategy::two_point(-90.0, 90.0, 0.5);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut per_shift: std::collections::HashMap<i64, [u64; 4]> = Default::default();
        run_session_with_sink(&pair, &receiver, &eve, 100_000, &mut rng, |r| {
            let idx = AliceChoice::ALL.iter().position(|a| *a == r.alice).unwrap();
            per_shift.entry(r.eve_shift_ps as i64).or_insert([0; 4])[idx] += 1;
        })
        .unwrap();
        assert_eq!(per_shift.len(), 2);
        for (shift, counts) in per_shift {
            let n: u64 = counts.iter().sum();
            let sigma = (n as f64 * 0.25 * 0.75).sqrt();
            for &c in &counts {
                assert!(
                    (c as f64 - n as f64 * 0.25).abs() < 4.0 * sigma,
                    "alice states skewed at shift {shift}: {counts:?}"
                );
            }
        }
    }
}
