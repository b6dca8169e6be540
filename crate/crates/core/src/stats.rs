//! Aggregate count statistics and security-relevant estimators.
//!
//! Counts are per *logical* detector (physical identity with Bob's
//! recorded flip undone), which coincides with the physical detectors in
//! two-state operation. Uncertainties follow the square-root-of-counts
//! rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::EveStrategy;
use crate::detector::DetectorPair;
use crate::protocol::{analytic_point, ProtocolError, ReceiverConfig};

/// QBER above which the protocol aborts; the loosest asymptotic bound for
/// distilling a positive key. Real-world finite-size systems sit nearer 7%.
pub const DEFAULT_QBER_THRESHOLD: f64 = 0.11;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("QBER is undefined with zero sifted events")]
    UndefinedQber,
    #[error("bias contrast is undefined with zero counts")]
    UndefinedBias,
    #[error("counts are inconsistent: {0}")]
    Inconsistent(String),
    #[error("strategy produces zero sifted probability")]
    ZeroSiftedProbability,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Aggregate counts for one (shift, mode) operating point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsSummary {
    /// Sifted events on logical detector 0.
    pub c0: u64,
    /// Sifted events on logical detector 1.
    pub c1: u64,
    pub sifted: u64,
    pub errors: u64,
    pub n_pulses: u64,
}

impl CountsSummary {
    /// Check the internal count invariants.
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.c0 + self.c1 != self.sifted {
            return Err(StatsError::Inconsistent(format!(
                "c0 + c1 = {} but sifted = {}",
                self.c0 + self.c1,
                self.sifted
            )));
        }
        if self.errors > self.sifted || self.sifted > self.n_pulses {
            return Err(StatsError::Inconsistent(format!(
                "errors {} / sifted {} / pulses {}",
                self.errors, self.sifted, self.n_pulses
            )));
        }
        Ok(())
    }

    /// Combine two summaries; merging is associative and commutative.
    pub fn merge(self, other: Self) -> Self {
        Self {
            c0: self.c0 + other.c0,
            c1: self.c1 + other.c1,
            sifted: self.sifted + other.sifted,
            errors: self.errors + other.errors,
            n_pulses: self.n_pulses + other.n_pulses,
        }
    }
}

/// Quantum bit error rate of the sifted key.
pub fn qber(summary: &CountsSummary) -> Result<f64, StatsError> {
    if summary.sifted == 0 {
        return Err(StatsError::UndefinedQber);
    }
    Ok(summary.errors as f64 / summary.sifted as f64)
}

/// Normalized detection imbalance `(C0 - C1) / (C0 + C1)`.
pub fn bias_contrast(summary: &CountsSummary) -> Result<f64, StatsError> {
    let total = summary.c0 + summary.c1;
    if total == 0 {
        return Err(StatsError::UndefinedBias);
    }
    Ok((summary.c0 as f64 - summary.c1 as f64) / total as f64)
}

/// Abort decision: the protocol stops when the QBER exceeds the threshold.
pub fn abort_check(qber: f64, threshold: f64) -> bool {
    qber > threshold
}

/// One-sigma uncertainty on a count of successes out of `n` trials.
///
/// `sqrt(count * (1 - count/n))`; for counts far below `n` this is the
/// square-root-of-counts rule.
pub fn binomial_sigma(count: u64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let c = count as f64;
    (c * (1.0 - c / n as f64)).max(0.0).sqrt()
}

/// Propagated one-sigma uncertainty of the bias contrast, from independent
/// square-root uncertainties on the two counts.
pub fn bias_sigma(c0: u64, c1: u64) -> f64 {
    let total = (c0 + c1) as f64;
    if total == 0.0 {
        return 0.0;
    }
    2.0 * ((c0 as f64 * c1 as f64) / total.powi(3)).sqrt()
}

/// Eve's information about the logical bit, in bits per sifted pulse.
///
/// Computed exactly from the click model as the mutual information between
/// the logical bit and Eve's side information on a sifted pulse: her own
/// shift label together with the basis announced during sifting. Averaged
/// over Alice's and Bob's uniform choices and conditioned on the event
/// being sifted.
pub fn eve_information(
    pair: &DetectorPair,
    receiver: &ReceiverConfig,
    strategy: &EveStrategy,
) -> Result<f64, StatsError> {
    let labels = strategy.shift_labels();
    let tau = strategy.channel_transmittance;

    // Joint sifted probability over (shift label, basis, logical bit),
    // weighted by each label's prior.
    let mut joint: Vec<[[f64; 2]; 2]> = Vec::with_capacity(labels.len());
    for &(shift_ps, prior) in &labels {
        let point = analytic_point(pair, receiver, shift_ps, tau)?;
        let mut cell = [[0.0; 2]; 2];
        for b in 0..2 {
            for l in 0..2 {
                cell[b][l] = prior * point.p_basis_bit[b][l];
            }
        }
        joint.push(cell);
    }
    mi_from_joint(&joint).ok_or(StatsError::ZeroSiftedProbability)
}

/// Mutual information `I(bit; side)` in bits, where `side` ranges over the
/// joint cells' (label, basis) indices. Cells hold unnormalized joint mass
/// by `[basis][bit]`; `None` when the total mass is zero.
pub(crate) fn mi_from_joint(joint: &[[[f64; 2]; 2]]) -> Option<f64> {
    let total: f64 = joint
        .iter()
        .map(|cell| cell[0][0] + cell[0][1] + cell[1][0] + cell[1][1])
        .sum();
    if total <= 0.0 {
        return None;
    }

    let mut p_bit = [0.0f64; 2];
    for cell in joint {
        for b in 0..2 {
            for l in 0..2 {
                p_bit[l] += cell[b][l] / total;
            }
        }
    }
    let mut mi = 0.0;
    for cell in joint {
        for b in 0..2 {
            let p_side: f64 = (cell[b][0] + cell[b][1]) / total;
            if p_side <= 0.0 {
                continue;
            }
            for l in 0..2 {
                let p = cell[b][l] / total;
                if p > 0.0 {
                    mi += p * (p / (p_side * p_bit[l])).log2();
                }
            }
        }
    }
    Some(mi.max(0.0))
}
