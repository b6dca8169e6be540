//! Phase-encoding BB84 state machines and the Monte Carlo receiver model.
//!
//! Alice encodes one of four relative phases; Bob demodulates with either
//! two phases (standard operation) or the same four phases as Alice
//! (four-state operation, which adds a recorded random bit flip). The
//! interference outcome follows the sum convention, fixed once in
//! [`routing_probability`]: phases summing to 0 route the photon to
//! detector 0, phases summing to pi route it to detector 1.
//!
//! The same click model is exposed two ways: sampled pulse by pulse in
//! [`run_session`], and enumerated exactly in [`analytic_point`]. Tests and
//! the attack optimizer lean on the latter; the Monte Carlo path exists to
//! validate it and to produce realistic count records.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::EveStrategy;
use crate::detector::DetectorPair;
use crate::stats::CountsSummary;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("visibility {0} is outside [0, 1]")]
    VisibilityOutOfRange(f64),
    #[error("probability argument {name} = {value} is outside [0, 1]")]
    ProbabilityOutOfRange { name: &'static str, value: f64 },
    #[error("receiver clock period {receiver_ps} ps does not match detector period {pair_ps} ps")]
    PeriodMismatch { receiver_ps: f64, pair_ps: f64 },
    #[error("nominal arrival {0} ps is not aligned to the detector grid")]
    MisalignedArrival(f64),
    #[error("Eve shift {0} ps is not aligned to the detector grid")]
    MisalignedShift(f64),
    #[error("waveform period {waveform_ps} ps does not match clock period {clock_ps} ps")]
    WaveformPeriodMismatch { waveform_ps: f64, clock_ps: f64 },
    #[error("session needs at least one pulse")]
    NoPulses,
    #[error("invalid Eve strategy: {0}")]
    BadStrategy(String),
}

/// Measurement basis of the phase encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    fn offset(self) -> f64 {
        match self {
            Basis::Z => 0.0,
            Basis::X => FRAC_PI_2,
        }
    }

    fn as_bit(self) -> bool {
        matches!(self, Basis::X)
    }
}

/// Bob's demodulation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemodMode {
    /// Standard operation: one phase per basis.
    TwoState,
    /// Countermeasure operation: Bob uses Alice's full phase set and
    /// records a flip bit that is undone in post-processing.
    FourState,
}

/// Alice's per-pulse preparation: a bit and a basis, encoded as the phase
/// `bit * pi + (basis == X) * pi/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliceChoice {
    pub bit: bool,
    pub basis: Basis,
}

impl AliceChoice {
    pub const ALL: [AliceChoice; 4] = [
        AliceChoice {
            bit: false,
            basis: Basis::Z,
        },
        AliceChoice {
            bit: false,
            basis: Basis::X,
        },
        AliceChoice {
            bit: true,
            basis: Basis::Z,
        },
        AliceChoice {
            bit: true,
            basis: Basis::X,
        },
    ];

    /// Encoded phase; the bit/basis/phase relation is fixed by construction.
    pub fn phase(&self) -> f64 {
        (self.bit as u8) as f64 * PI + self.basis.offset()
    }
}

/// Bob's per-pulse demodulation choice.
///
/// In two-state mode `flip` is always false and the phase is the basis
/// offset (0 or pi/2). In four-state mode the phase gains `flip * pi`,
/// covering Alice's full set {0, pi/2, pi, 3pi/2}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BobChoice {
    pub mode: DemodMode,
    pub basis: Basis,
    pub flip: bool,
}

impl BobChoice {
    /// Nominal demodulation phase before any drive droop.
    pub fn phase(&self) -> f64 {
        self.basis.offset() + (self.flip as u8) as f64 * PI
    }

    /// All choices Bob draws from uniformly in the given mode.
    pub fn all(mode: DemodMode) -> Vec<BobChoice> {
        let flips: &[bool] = match mode {
            DemodMode::TwoState => &[false],
            DemodMode::FourState => &[false, true],
        };
        let mut v = Vec::new();
        for &basis in &[Basis::Z, Basis::X] {
            for &flip in flips {
                v.push(BobChoice { mode, basis, flip });
            }
        }
        v
    }
}

/// Draw Alice's preparation uniformly over the four states.
pub fn choose_alice<R: Rng>(rng: &mut R) -> AliceChoice {
    AliceChoice::ALL[rng.random_range(0..4usize)]
}

/// Draw Bob's demodulation uniformly over the mode's phase set.
pub fn choose_bob<R: Rng>(mode: DemodMode, rng: &mut R) -> BobChoice {
    let basis = if rng.random_bool(0.5) {
        Basis::Z
    } else {
        Basis::X
    };
    let flip = match mode {
        DemodMode::TwoState => false,
        DemodMode::FourState => rng.random_bool(0.5),
    };
    BobChoice { mode, basis, flip }
}

/// Normalized drive amplitude shapes of Bob's phase modulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaveformShape {
    IdealSquare,
    RaisedCosineEdges,
}

/// Drive waveform of Bob's phase modulator over one clock period.
///
/// `amplitude(shift)` is 1 on the plateau around the nominal gating point
/// and decays over the edges; a pulse arriving `shift` away from nominal is
/// modulated with `phase * amplitude(shift)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveWaveform {
    pub shape: WaveformShape,
    /// Full width of the unit-amplitude plateau, in ps.
    pub plateau_ps: f64,
    /// Duration of each raised-cosine edge, in ps (ignored for ideal-square).
    pub rise_fall_ps: f64,
    /// Clock period the waveform repeats with, in ps.
    pub period_ps: f64,
}

impl DriveWaveform {
    /// Droop-free drive: unit amplitude across the whole period.
    pub fn ideal(period_ps: f64) -> Self {
        Self {
            shape: WaveformShape::IdealSquare,
            plateau_ps: period_ps,
            rise_fall_ps: 0.0,
            period_ps,
        }
    }

    /// Raised-cosine-edged drive with the given plateau and edge widths.
    pub fn raised_cosine(plateau_ps: f64, rise_fall_ps: f64, period_ps: f64) -> Self {
        Self {
            shape: WaveformShape::RaisedCosineEdges,
            plateau_ps,
            rise_fall_ps,
            period_ps,
        }
    }

    /// Normalized amplitude at a displacement from the nominal gating
    /// point. Periodic, symmetric, and equal to 1 at zero displacement.
    pub fn amplitude(&self, shift_ps: f64) -> f64 {
        let u = {
            let r = shift_ps.rem_euclid(self.period_ps);
            r.min(self.period_ps - r)
        };
        let half_plateau = self.plateau_ps / 2.0;
        match self.shape {
            WaveformShape::IdealSquare => {
                if u <= half_plateau {
                    1.0
                } else {
                    0.0
                }
            }
            WaveformShape::RaisedCosineEdges => {
                if u <= half_plateau {
                    1.0
                } else if u <= half_plateau + self.rise_fall_ps {
                    0.5 * (1.0 + (PI * (u - half_plateau) / self.rise_fall_ps).cos())
                } else {
                    0.0
                }
            }
        }
    }
}

/// Bob's applied phase once the drive droop at the pulse's displacement is
/// accounted for: `phase * v(shift)`, with `v(0) = 1`.
pub fn effective_phase(bob: &BobChoice, waveform: &DriveWaveform, shift_ps: f64) -> f64 {
    bob.phase() * waveform.amplitude(shift_ps)
}

/// Receiver operating point: demodulation mode, drive waveform, intrinsic
/// interference visibility, enforced deadtime, and clock timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    pub mode: DemodMode,
    pub waveform: DriveWaveform,
    /// Intrinsic interferometric visibility; 0.94 gives a 3% baseline QBER.
    pub visibility: f64,
    /// Clock cycles after a click during which further clicks are discarded.
    pub deadtime_cycles: u32,
    pub period_ps: f64,
    /// Arrival time of an unshifted pulse within the gate period.
    pub nominal_arrival_ps: f64,
}

impl ReceiverConfig {
    pub const DEFAULT_VISIBILITY: f64 = 0.94;

    /// Receiver with no drive droop, no deadtime, and default visibility,
    /// with the nominal arrival mid-period.
    pub fn new(mode: DemodMode, period_ps: f64) -> Self {
        Self {
            mode,
            waveform: DriveWaveform::ideal(period_ps),
            visibility: Self::DEFAULT_VISIBILITY,
            deadtime_cycles: 0,
            period_ps,
            nominal_arrival_ps: period_ps / 2.0,
        }
    }

    pub fn with_waveform(mut self, waveform: DriveWaveform) -> Self {
        self.waveform = waveform;
        self
    }

    pub fn with_visibility(mut self, visibility: f64) -> Self {
        self.visibility = visibility;
        self
    }

    pub fn with_deadtime(mut self, cycles: u32) -> Self {
        self.deadtime_cycles = cycles;
        self
    }

    /// Check this config against a detector pair and resolve grid indices.
    pub fn geometry(&self, pair: &DetectorPair) -> Result<SessionGeometry, ProtocolError> {
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(ProtocolError::VisibilityOutOfRange(self.visibility));
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0);
        if !close(self.period_ps, pair.period_ps()) {
            return Err(ProtocolError::PeriodMismatch {
                receiver_ps: self.period_ps,
                pair_ps: pair.period_ps(),
            });
        }
        if !close(self.waveform.period_ps, self.period_ps) {
            return Err(ProtocolError::WaveformPeriodMismatch {
                waveform_ps: self.waveform.period_ps,
                clock_ps: self.period_ps,
            });
        }
        let nominal_bin = pair
            .apd0
            .bins_for_shift(self.nominal_arrival_ps)
            .map_err(|_| ProtocolError::MisalignedArrival(self.nominal_arrival_ps))?;
        Ok(SessionGeometry {
            n_bins: pair.n_bins(),
            nominal_bin,
        })
    }
}

/// Resolved grid indices for a (receiver, detector pair) combination.
#[derive(Debug, Clone, Copy)]
pub struct SessionGeometry {
    n_bins: usize,
    nominal_bin: i64,
}

impl SessionGeometry {
    /// Arrival bin of a pulse shifted by a whole number of grid bins.
    pub fn arrival_bin(&self, shift_bins: i64) -> usize {
        (self.nominal_bin + shift_bins).rem_euclid(self.n_bins as i64) as usize
    }
}

/// Which detector(s) fired in a gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Click {
    None,
    Det0,
    Det1,
    Both,
}

/// A single detector identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Detector {
    Det0,
    Det1,
}

impl Detector {
    fn as_bit(self) -> bool {
        matches!(self, Detector::Det1)
    }
}

/// Exact click outcome distribution for one pulse configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickProbabilities {
    pub p_det0: f64,
    pub p_det1: f64,
    pub p_both: f64,
    pub p_none: f64,
}

/// Probability that the photon is routed to detector 0 given the phase sum.
///
/// This is the crate's single statement of the interference convention:
/// `(1 + V cos(phi_a + phi_b)) / 2`, so a phase sum of 0 is fully
/// constructive toward detector 0 and a sum of pi fully constructive
/// toward detector 1.
pub fn routing_probability(phi_a: f64, phi_b_eff: f64, visibility: f64) -> f64 {
    0.5 * (1.0 + visibility * (phi_a + phi_b_eff).cos())
}

/// Click outcome probabilities for a single photon interfering with phases
/// `phi_a + phi_b_eff`, detected with per-detector efficiencies and
/// independent dark counts. The four outcomes always sum to 1.
pub fn click_probabilities(
    phi_a: f64,
    phi_b_eff: f64,
    visibility: f64,
    eta0: f64,
    eta1: f64,
    dark0: f64,
    dark1: f64,
) -> Result<ClickProbabilities, ProtocolError> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(ProtocolError::VisibilityOutOfRange(visibility));
    }
    for (name, value) in [
        ("eta0", eta0),
        ("eta1", eta1),
        ("dark0", dark0),
        ("dark1", dark1),
    ] {
        if !(0.0..=1.0).contains(&value) {
            return Err(ProtocolError::ProbabilityOutOfRange { name, value });
        }
    }

    let r0 = routing_probability(phi_a, phi_b_eff, visibility);
    let r1 = 1.0 - r0;

    // Condition on the photon's route; dark counts fire independently.
    let mut p = [0.0f64; 4]; // [only0, only1, both, none]
    for (route_prob, eta_hit, hit_is_det0) in [(r0, eta0, true), (r1, eta1, false)] {
        let (q0, q1) = if hit_is_det0 {
            (1.0 - (1.0 - eta_hit) * (1.0 - dark0), dark1)
        } else {
            (dark0, 1.0 - (1.0 - eta_hit) * (1.0 - dark1))
        };
        p[0] += route_prob * q0 * (1.0 - q1);
        p[1] += route_prob * (1.0 - q0) * q1;
        p[2] += route_prob * q0 * q1;
        p[3] += route_prob * (1.0 - q0) * (1.0 - q1);
    }

    Ok(ClickProbabilities {
        p_det0: p[0],
        p_det1: p[1],
        p_both: p[2],
        p_none: p[3],
    })
}

/// Detector that fires under perfect interference for a given combination.
///
/// Derived from the sum convention: the phase sum is
/// `(bit + flip) * pi + (basis == X) * pi`, hence detector
/// `bit XOR flip XOR (basis == X)`.
pub fn expected_detector(alice_bit: bool, basis: Basis, flip: bool) -> Detector {
    if alice_bit ^ flip ^ basis.as_bit() {
        Detector::Det1
    } else {
        Detector::Det0
    }
}

/// Bit value a clicking detector encodes before Bob's flip is undone.
///
/// In the Z basis this is the detector index itself; in the X basis the
/// sum convention inverts the mapping, a fixed public relabeling.
pub fn physical_bit(detector: Detector, basis: Basis) -> bool {
    detector.as_bit() ^ basis.as_bit()
}

/// Outcome of sifting one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiftOutcome {
    pub sifted: bool,
    pub logical_bit: Option<bool>,
    pub error: Option<bool>,
}

/// Sift a pulse given a resolved click (double clicks must already be
/// arbitrated to a single detector). An event is sifted when the bases
/// match and a detector fired; the logical bit is the physical bit with
/// Bob's recorded flip undone.
pub fn sift(alice: &AliceChoice, bob: &BobChoice, click: Option<Detector>) -> SiftOutcome {
    match click {
        Some(det) if alice.basis == bob.basis => {
            let logical = physical_bit(det, bob.basis) ^ bob.flip;
            SiftOutcome {
                sifted: true,
                logical_bit: Some(logical),
                error: Some(logical != alice.bit),
            }
        }
        _ => SiftOutcome {
            sifted: false,
            logical_bit: None,
            error: None,
        },
    }
}

/// Ground-truth record of one simulated pulse.
///
/// `click` is the raw detector outcome; a sifted double click is counted
/// with a uniformly random detector, in which case `logical_bit` reflects
/// the arbitration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub alice: AliceChoice,
    pub eve_shift_ps: f64,
    pub bob: BobChoice,
    pub click: Click,
    pub sifted: bool,
    pub logical_bit: Option<bool>,
    pub error: Option<bool>,
}

/// Run a seeded end-to-end session of `n_pulses` pulses.
pub fn run_session<R: Rng>(
    pair: &DetectorPair,
    receiver: &ReceiverConfig,
    eve: &EveStrategy,
    n_pulses: u64,
    rng: &mut R,
) -> Result<CountsSummary, ProtocolError> {
    run_session_inner(pair, receiver, eve, n_pulses, rng, None)
}

/// Like [`run_session`], additionally streaming every [`PulseRecord`] to
/// `sink`. Intended for debugging; the record stream is costly at large
/// pulse counts.
pub fn run_session_with_sink<R: Rng, F: FnMut(&PulseRecord)>(
    pair: &DetectorPair,
    receiver: &ReceiverConfig,
    eve: &EveStrategy,
    n_pulses: u64,
    rng: &mut R,
    mut sink: F,
) -> Result<CountsSummary, ProtocolError> {
    run_session_inner(pair, receiver, eve, n_pulses, rng, Some(&mut sink))
}

fn run_session_inner<R: Rng>(
    pair: &DetectorPair,
    receiver: &ReceiverConfig,
    eve: &EveStrategy,
    n_pulses: u64,
    rng: &mut R,
    mut sink: Option<&mut dyn FnMut(&PulseRecord)>,
) -> Result<CountsSummary, ProtocolError> {
    if n_pulses == 0 {
        return Err(ProtocolError::NoPulses);
    }
    let geometry = receiver.geometry(pair)?;
    let shifts = eve.shift_table(pair)?;
    let transmittance = eve.channel_transmittance;
    if !(0.0..=1.0).contains(&transmittance) || transmittance == 0.0 {
        return Err(ProtocolError::BadStrategy(format!(
            "channel transmittance {transmittance} is outside (0, 1]"
        )));
    }

    let bobs = BobChoice::all(receiver.mode);

    // Cumulative outcome tables per (shift, alice, bob): [only0, +only1, +both].
    let mut tables = Vec::with_capacity(shifts.len() * 4 * bobs.len());
    for &(shift_ps, shift_bins) in &shifts {
        let bin = geometry.arrival_bin(shift_bins);
        let eta0 = pair.apd0.samples()[bin];
        let eta1 = pair.apd1.samples()[bin];
        for alice in AliceChoice::ALL {
            for bob in &bobs {
                let phi_b = effective_phase(bob, &receiver.waveform, shift_ps);
                let p = click_probabilities(
                    alice.phase(),
                    phi_b,
                    receiver.visibility,
                    eta0,
                    eta1,
                    pair.apd0.dark_prob(),
                    pair.apd1.dark_prob(),
                )?;
                tables.push([
                    p.p_det0,
                    p.p_det0 + p.p_det1,
                    p.p_det0 + p.p_det1 + p.p_both,
                ]);
            }
        }
    }
    // Blocked pulses can only produce dark counts.
    let blocked = {
        let d0 = pair.apd0.dark_prob();
        let d1 = pair.apd1.dark_prob();
        let only0 = d0 * (1.0 - d1);
        let only1 = (1.0 - d0) * d1;
        [only0, only0 + only1, only0 + only1 + d0 * d1]
    };

    let n_bob = bobs.len();
    let mut summary = CountsSummary::default();
    let mut deadtime_left = 0u32;

    for _ in 0..n_pulses {
        summary.n_pulses += 1;

        let (shift_idx, shift_ps) = eve.pick_shift(&shifts, rng);
        let transmitted = transmittance >= 1.0 || rng.random_bool(transmittance);

        let alice = choose_alice(rng);
        let bob = choose_bob(receiver.mode, rng);

        let alice_idx = AliceChoice::ALL.iter().position(|a| *a == alice).unwrap();
        let bob_idx = bobs.iter().position(|b| *b == bob).unwrap();
        let cdf = if transmitted {
            &tables[(shift_idx * 4 + alice_idx) * n_bob + bob_idx]
        } else {
            &blocked
        };

        let u: f64 = rng.random();
        let raw_click = if u < cdf[0] {
            Click::Det0
        } else if u < cdf[1] {
            Click::Det1
        } else if u < cdf[2] {
            Click::Both
        } else {
            Click::None
        };

        // Enforced deadtime: clicks within the window are discarded.
        let click = if raw_click != Click::None && deadtime_left > 0 {
            Click::None
        } else {
            raw_click
        };
        if deadtime_left > 0 {
            deadtime_left -= 1;
        } else if click != Click::None {
            deadtime_left = receiver.deadtime_cycles;
        }

        let resolved = match click {
            Click::None => None,
            Click::Det0 => Some(Detector::Det0),
            Click::Det1 => Some(Detector::Det1),
            Click::Both => Some(if rng.random_bool(0.5) {
                Detector::Det0
            } else {
                Detector::Det1
            }),
        };

        let outcome = sift(&alice, &bob, resolved);
        if outcome.sifted {
            let det = resolved.expect("sifted implies a click");
            // Count by logical detector: physical identity with the
            // recorded flip undone. Identical to physical in two-state.
            let logical_det = det.as_bit() ^ bob.flip;
            if logical_det {
                summary.c1 += 1;
            } else {
                summary.c0 += 1;
            }
            summary.sifted += 1;
            if outcome.error == Some(true) {
                summary.errors += 1;
            }
        }

        if let Some(sink) = sink.as_deref_mut() {
            sink(&PulseRecord {
                alice,
                eve_shift_ps: shift_ps,
                bob,
                click,
                sifted: outcome.sifted,
                logical_bit: outcome.logical_bit,
                error: outcome.error,
            });
        }
    }

    Ok(summary)
}

/// Exact per-pulse outcome probabilities at one fixed Eve shift,
/// enumerated over Alice's and Bob's uniform choices.
///
/// The enumeration matches the Monte Carlo model with zero deadtime:
/// sifted events are single clicks in matching bases plus double clicks
/// arbitrated half to each detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticPoint {
    pub shift_ps: f64,
    /// Probability per pulse of a sifted event.
    pub p_sifted: f64,
    /// Sifted probability by logical detector; the two sum to `p_sifted`.
    pub p_logical0: f64,
    pub p_logical1: f64,
    /// Probability per pulse of a sifted event with a logical bit error.
    pub p_error: f64,
    /// Joint sifted probability by (basis, logical bit); indices are
    /// `[Z=0 | X=1][bit]`.
    pub p_basis_bit: [[f64; 2]; 2],
}

impl AnalyticPoint {
    pub fn qber(&self) -> f64 {
        self.p_error / self.p_sifted
    }

    pub fn bias(&self) -> f64 {
        (self.p_logical0 - self.p_logical1) / (self.p_logical0 + self.p_logical1)
    }
}

/// Enumerate the exact outcome distribution for a pulse shifted by
/// `shift_ps` (grid-aligned) through a channel of the given transmittance.
pub fn analytic_point(
    pair: &DetectorPair,
    receiver: &ReceiverConfig,
    shift_ps: f64,
    transmittance: f64,
) -> Result<AnalyticPoint, ProtocolError> {
    let geometry = receiver.geometry(pair)?;
    let shift_bins = pair
        .apd0
        .bins_for_shift(shift_ps)
        .map_err(|_| ProtocolError::MisalignedShift(shift_ps))?;
    let bin = geometry.arrival_bin(shift_bins);
    let (eta0, eta1) = (pair.apd0.samples()[bin], pair.apd1.samples()[bin]);
    let (d0, d1) = (pair.apd0.dark_prob(), pair.apd1.dark_prob());
    if !(0.0..=1.0).contains(&transmittance) {
        return Err(ProtocolError::ProbabilityOutOfRange {
            name: "transmittance",
            value: transmittance,
        });
    }

    let bobs = BobChoice::all(receiver.mode);
    let p_choice = 0.25 / bobs.len() as f64;

    let mut point = AnalyticPoint {
        shift_ps,
        p_sifted: 0.0,
        p_logical0: 0.0,
        p_logical1: 0.0,
        p_error: 0.0,
        p_basis_bit: [[0.0; 2]; 2],
    };

    for alice in AliceChoice::ALL {
        for bob in &bobs {
            if alice.basis != bob.basis {
                continue;
            }
            let phi_b = effective_phase(bob, &receiver.waveform, shift_ps);
            // Transmitted and blocked branches of the lossy channel.
            for (branch_prob, e0, e1) in
                [(transmittance, eta0, eta1), (1.0 - transmittance, 0.0, 0.0)]
            {
                if branch_prob == 0.0 {
                    continue;
                }
                let p =
                    click_probabilities(alice.phase(), phi_b, receiver.visibility, e0, e1, d0, d1)?;
                let weight = p_choice * branch_prob;
                // Double clicks arbitrate uniformly over detectors.
                for (det, p_det) in [
                    (Detector::Det0, p.p_det0 + 0.5 * p.p_both),
                    (Detector::Det1, p.p_det1 + 0.5 * p.p_both),
                ] {
                    let w = weight * p_det;
                    if w == 0.0 {
                        continue;
                    }
                    let logical_bit = physical_bit(det, bob.basis) ^ bob.flip;
                    let logical_det = det.as_bit() ^ bob.flip;
                    point.p_sifted += w;
                    if logical_det {
                        point.p_logical1 += w;
                    } else {
                        point.p_logical0 += w;
                    }
                    if logical_bit != alice.bit {
                        point.p_error += w;
                    }
                    point.p_basis_bit[bob.basis.as_bit() as usize][logical_bit as usize] += w;
                }
            }
        }
    }

    Ok(point)
}
