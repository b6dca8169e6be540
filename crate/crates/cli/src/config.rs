//! Run configuration: a single JSON document, with CLI flags acting as
//! overrides of individual keys.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use fourstate_core::detector::{load_curves_csv, make_gate_curve, DetectorPair, GateShape};
use fourstate_core::keyrate::{KeyRateInputs, LossSweepConfig, ModeBounds};
use fourstate_core::protocol::{DemodMode, DriveWaveform, ReceiverConfig, WaveformShape};
use fourstate_core::EveStrategy;

/// Complete description of a run. Everything except the seed has a
/// default; the seed is mandatory so that every artifact is reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub curves: CurveSource,
    #[serde(default)]
    pub receiver: ReceiverSection,
    #[serde(default = "EveStrategy::none")]
    pub eve: EveStrategy,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default = "default_n_pulses")]
    pub n_pulses: u64,
    #[serde(default)]
    pub keyrate: KeyrateSection,
    #[serde(default)]
    pub loss: LossSection,
}

fn default_n_pulses() -> u64 {
    1_000_000
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            curves: CurveSource::default(),
            receiver: ReceiverSection::default(),
            eve: EveStrategy::none(),
            sweep: SweepSection::default(),
            n_pulses: default_n_pulses(),
            keyrate: KeyrateSection::default(),
            loss: LossSection::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Resolve the detector pair described by the config.
    pub fn detector_pair(&self) -> Result<DetectorPair> {
        self.curves.build()
    }

    /// Resolve the receiver for the given pair, honoring mode overrides.
    pub fn receiver_config(&self, pair: &DetectorPair) -> Result<ReceiverConfig> {
        let period = pair.period_ps();
        let waveform = self.receiver.waveform.build(period);
        let receiver = ReceiverConfig {
            mode: self.receiver.mode,
            waveform,
            visibility: self.receiver.visibility,
            deadtime_cycles: self.receiver.deadtime_cycles,
            period_ps: period,
            nominal_arrival_ps: self.receiver.nominal_arrival_ps.unwrap_or(period / 2.0),
        };
        receiver
            .geometry(pair)
            .map_err(|e| anyhow!("invalid receiver configuration: {e}"))?;
        Ok(receiver)
    }

    /// The shift grid for characterization sweeps.
    pub fn sweep_shifts(&self, pair: &DetectorPair) -> Vec<f64> {
        let step = self.sweep.step_ps.unwrap_or_else(|| pair.dt_ps());
        let span = self.sweep.span_ps.unwrap_or_else(|| pair.period_ps());
        fourstate_core::attack::sweep_grid(step, span)
    }

    /// Error-rate inputs for the key-rate pipeline. When not pinned in the
    /// config they default to the receiver's own zero-shift observables.
    pub fn keyrate_inputs(
        &self,
        pair: &DetectorPair,
        receiver: &ReceiverConfig,
    ) -> Result<KeyRateInputs> {
        let observed = KeyRateInputs::observed(pair, receiver, self.keyrate.f_ec)?;
        Ok(KeyRateInputs {
            e_bit_obs: self.keyrate.e_bit_obs.unwrap_or(observed.e_bit_obs),
            e_phase_obs: self.keyrate.e_phase_obs.unwrap_or(observed.e_phase_obs),
            f_ec: self.keyrate.f_ec,
        })
    }
}

/// Where the efficiency curves come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum CurveSource {
    Fixture {
        #[serde(default)]
        fixture: FixtureSpec,
    },
    Csv {
        path: PathBuf,
    },
}

impl Default for CurveSource {
    fn default() -> Self {
        CurveSource::Fixture {
            fixture: FixtureSpec::default(),
        }
    }
}

impl CurveSource {
    fn build(&self) -> Result<DetectorPair> {
        match self {
            CurveSource::Fixture { fixture } => fixture.build(),
            CurveSource::Csv { path } => load_curves_csv(path)
                .map_err(|e| anyhow!("loading curves from {}: {e}", path.display())),
        }
    }
}

/// Synthetic two-gate fixture: both gates share a shape and width, sit
/// `center_offset_ps` either side of mid-period, and peak at `peak0` /
/// `peak1`. The default is the severely mismatched pair used throughout
/// the test suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureSpec {
    pub shape: GateShape,
    pub dt_ps: f64,
    pub n_bins: usize,
    pub peak0: f64,
    pub peak1: f64,
    pub center_offset_ps: f64,
    pub fwhm_ps: f64,
    pub dark_prob: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            shape: GateShape::Gaussian,
            dt_ps: 4.5,
            n_bins: 222,
            peak0: 0.20,
            peak1: 0.12,
            center_offset_ps: 50.0,
            fwhm_ps: 250.0,
            dark_prob: 1e-5,
        }
    }
}

impl FixtureSpec {
    pub fn build(&self) -> Result<DetectorPair> {
        let period = self.dt_ps * self.n_bins as f64;
        let mid = period / 2.0;
        let apd0 = make_gate_curve(
            self.shape,
            mid - self.center_offset_ps,
            self.fwhm_ps,
            self.peak0,
            self.dt_ps,
            period,
            self.dark_prob,
        )?;
        let apd1 = make_gate_curve(
            self.shape,
            mid + self.center_offset_ps,
            self.fwhm_ps,
            self.peak1,
            self.dt_ps,
            period,
            self.dark_prob,
        )?;
        Ok(DetectorPair::new(apd0, apd1)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverSection {
    pub mode: DemodMode,
    pub visibility: f64,
    pub deadtime_cycles: u32,
    pub waveform: WaveformSection,
    pub nominal_arrival_ps: Option<f64>,
}

impl Default for ReceiverSection {
    fn default() -> Self {
        Self {
            mode: DemodMode::TwoState,
            visibility: ReceiverConfig::DEFAULT_VISIBILITY,
            deadtime_cycles: 0,
            waveform: WaveformSection::default(),
            nominal_arrival_ps: None,
        }
    }
}

/// Waveform parameters without the period; the period always comes from the
/// curve grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveformSection {
    pub shape: WaveformShape,
    pub plateau_ps: f64,
    pub rise_fall_ps: f64,
}

impl Default for WaveformSection {
    fn default() -> Self {
        Self {
            shape: WaveformShape::RaisedCosineEdges,
            plateau_ps: 300.0,
            rise_fall_ps: 120.0,
        }
    }
}

impl WaveformSection {
    pub fn build(&self, period_ps: f64) -> DriveWaveform {
        match self.shape {
            WaveformShape::IdealSquare => DriveWaveform {
                shape: WaveformShape::IdealSquare,
                plateau_ps: self.plateau_ps,
                rise_fall_ps: 0.0,
                period_ps,
            },
            WaveformShape::RaisedCosineEdges => {
                DriveWaveform::raised_cosine(self.plateau_ps, self.rise_fall_ps, period_ps)
            }
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Sweep step; defaults to the curve grid step.
    pub step_ps: Option<f64>,
    /// Swept span centered on zero shift; defaults to one clock period.
    pub span_ps: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyrateSection {
    /// Observed bit error rate; defaults to the model's zero-shift QBER.
    pub e_bit_obs: Option<f64>,
    /// Observed phase error rate; defaults like `e_bit_obs`.
    pub e_phase_obs: Option<f64>,
    pub f_ec: f64,
    pub qber_threshold: f64,
    /// Fine analysis resolution; defaults to the curve grid step.
    pub dt_fine_ps: Option<f64>,
    /// Coarse analysis resolution; defaults to 11x the fine step.
    pub dt_coarse_ps: Option<f64>,
}

impl Default for KeyrateSection {
    fn default() -> Self {
        Self {
            e_bit_obs: None,
            e_phase_obs: None,
            f_ec: 1.10,
            qber_threshold: fourstate_core::stats::DEFAULT_QBER_THRESHOLD,
            dt_fine_ps: None,
            dt_coarse_ps: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub loss_min_db: f64,
    pub loss_max_db: f64,
    pub loss_step_db: f64,
    pub detector_efficiency: f64,
    pub dark_prob_total: f64,
    pub e_optical: f64,
    /// Filtering bounds per mode; when absent they are computed by running
    /// the key-rate pipeline on the configured curves.
    pub two_state: Option<ModeBounds>,
    pub four_state: Option<ModeBounds>,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            loss_min_db: 0.0,
            loss_max_db: 60.0,
            loss_step_db: 1.0,
            detector_efficiency: 0.2,
            dark_prob_total: 2e-5,
            e_optical: 0.03,
            two_state: None,
            four_state: None,
        }
    }
}

impl LossSection {
    pub fn sweep_config(&self) -> LossSweepConfig {
        let mut grid = Vec::new();
        let mut loss = self.loss_min_db;
        while loss <= self.loss_max_db + 1e-9 {
            grid.push(loss);
            loss += self.loss_step_db;
        }
        LossSweepConfig {
            loss_grid_db: grid,
            detector_efficiency: self.detector_efficiency,
            dark_prob_total: self.dark_prob_total,
            e_optical: self.e_optical,
        }
    }
}
