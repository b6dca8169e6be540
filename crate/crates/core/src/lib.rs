//! Simulation and security analysis of a phase-encoding BB84 receiver whose
//! single-photon detectors have time-dependent, mismatched efficiencies.
//!
//! The crate models a GHz-gated two-detector receiver, an eavesdropper who
//! shifts pulse arrival times to exploit the efficiency mismatch, and the
//! four-state demodulation countermeasure that symmetrizes the logical
//! detection events. On top of the Monte Carlo protocol simulation it
//! provides the analytic machinery to bound the secret key rate under such
//! attacks: Procrustean filtering success probabilities, a small linear
//! program over the attacker's arrival-time distribution, and a rate-vs-loss
//! sweep.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`detector`]: gated efficiency curves, shifting/resampling, CSV I/O,
//!   physical-to-logical curve derivation per demodulation mode.
//! - [`protocol`]: Alice/Bob state machines, interference and click model,
//!   drive-waveform droop, sifting, and the seeded Monte Carlo session.
//! - [`attack`]: Eve's time-shift strategies, characterization sweeps, and
//!   the exhaustive shift-pair optimizer.
//! - [`stats`]: QBER, bias contrast, abort decision, Eve's mutual
//!   information, and count uncertainties.
//! - [`keyrate`]: binary entropy, Procrustean bounds, the LP solver and its
//!   brute-force oracle, key-rate formula, and loss/resolution sweeps.
//! - [`oracle`]: independent brute-force validators used by tests and the
//!   CLI `oracle` subcommand.

pub mod attack;
pub mod detector;
pub mod keyrate;
pub mod oracle;
pub mod protocol;
pub mod stats;

pub use attack::{EveKind, EveStrategy, ShiftPairChoice, SweepPoint};
pub use detector::{DetectorPair, GateEfficiencyCurve, GateShape};
pub use keyrate::{KeyRateInputs, KeyRateReport, OptimizedBounds};
pub use protocol::{
    AliceChoice, Basis, BobChoice, ClickProbabilities, DemodMode, DriveWaveform, PulseRecord,
    ReceiverConfig, WaveformShape,
};
pub use stats::CountsSummary;
