//! Time-dependent single-photon detector efficiency curves.
//!
//! A gated detector's efficiency is sampled over one clock period on a
//! uniform grid. All arrival times are discretized to that grid and the
//! curve is treated as periodic, so shifting past a gate edge wraps into
//! the adjacent gate. The pair of curves (one per detector) is the
//! diagonal efficiency model everything else in this crate consumes.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::DemodMode;

/// Relative tolerance for grid-alignment checks on time quantities.
const GRID_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("period {period_ps} ps is not an integer multiple of bin width {dt_ps} ps")]
    NonIntegerBinCount { period_ps: f64, dt_ps: f64 },
    #[error("bin width must be positive, got {0}")]
    NonPositiveBinWidth(f64),
    #[error("curve must contain at least one sample")]
    Empty,
    #[error("efficiency sample {value} at bin {bin} is outside [0, 1]")]
    SampleOutOfRange { bin: usize, value: f64 },
    #[error("dark-count probability {0} is outside [0, 1)")]
    DarkOutOfRange(f64),
    #[error("peak efficiency {0} is outside [0, 1]")]
    PeakOutOfRange(f64),
    #[error("gate FWHM must be positive, got {0}")]
    NonPositiveFwhm(f64),
    #[error("shift {delta_ps} ps is not a multiple of the {dt_ps} ps grid")]
    MisalignedShift { delta_ps: f64, dt_ps: f64 },
    #[error(
        "cannot resample {dt_old} ps grid to {dt_new} ps: not an integer decimation or refinement"
    )]
    IncompatibleResample { dt_old: f64, dt_new: f64 },
    #[error("decimation by {factor} does not divide the {n_bins}-bin period evenly")]
    UnevenDecimation { factor: usize, n_bins: usize },
    #[error("detector curves disagree on grid: {0}")]
    GridMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}: time column is not a uniform ascending grid starting at 0")]
    IrregularTimeGrid { path: String },
    #[error("{path}: sidecar metadata is invalid: {reason}")]
    BadSidecar { path: String, reason: String },
}

/// Sampled detection efficiency across one clock period of a gated detector.
///
/// `samples[i]` is the efficiency for a photon arriving in the bin starting
/// at `i * dt_ps`; the curve repeats with period `period_ps`. `dark_prob`
/// is the per-gate dark-count probability of the same detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateEfficiencyCurve {
    samples: Vec<f64>,
    dt_ps: f64,
    period_ps: f64,
    dark_prob: f64,
}

impl GateEfficiencyCurve {
    /// Default clock period of the simulated receiver, in picoseconds.
    pub const DEFAULT_PERIOD_PS: f64 = 1000.0;

    pub fn new(
        samples: Vec<f64>,
        dt_ps: f64,
        period_ps: f64,
        dark_prob: f64,
    ) -> Result<Self, CurveError> {
        if dt_ps <= 0.0 || !dt_ps.is_finite() {
            return Err(CurveError::NonPositiveBinWidth(dt_ps));
        }
        if samples.is_empty() {
            return Err(CurveError::Empty);
        }
        let n = samples.len();
        if !is_close(n as f64 * dt_ps, period_ps) {
            return Err(CurveError::NonIntegerBinCount { period_ps, dt_ps });
        }
        for (bin, &value) in samples.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) || !value.is_finite() {
                return Err(CurveError::SampleOutOfRange { bin, value });
            }
        }
        if !(0.0..1.0).contains(&dark_prob) {
            return Err(CurveError::DarkOutOfRange(dark_prob));
        }
        Ok(Self {
            samples,
            dt_ps,
            period_ps,
            dark_prob,
        })
    }

    /// Constant-efficiency curve, mostly useful in tests and fixtures.
    pub fn constant(
        value: f64,
        n_bins: usize,
        dt_ps: f64,
        dark_prob: f64,
    ) -> Result<Self, CurveError> {
        Self::new(vec![value; n_bins], dt_ps, n_bins as f64 * dt_ps, dark_prob)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn n_bins(&self) -> usize {
        self.samples.len()
    }

    pub fn dt_ps(&self) -> f64 {
        self.dt_ps
    }

    pub fn period_ps(&self) -> f64 {
        self.period_ps
    }

    pub fn dark_prob(&self) -> f64 {
        self.dark_prob
    }

    /// Efficiency at a bin index, wrapping periodically.
    pub fn at_bin(&self, bin: i64) -> f64 {
        let n = self.samples.len() as i64;
        self.samples[bin.rem_euclid(n) as usize]
    }

    /// Bin index holding time `t_ps`, reduced into one period.
    pub fn bin_containing(&self, t_ps: f64) -> usize {
        let t = t_ps.rem_euclid(self.period_ps);
        // Nudge away from bin edges so grid-aligned times land exactly.
        let idx = ((t / self.dt_ps) + GRID_EPS).floor() as usize;
        idx % self.samples.len()
    }

    /// Number of whole bins in `delta_ps`, or an error if off-grid.
    pub fn bins_for_shift(&self, delta_ps: f64) -> Result<i64, CurveError> {
        let ratio = delta_ps / self.dt_ps;
        let k = ratio.round();
        if (ratio - k).abs() > GRID_EPS {
            return Err(CurveError::MisalignedShift {
                delta_ps,
                dt_ps: self.dt_ps,
            });
        }
        Ok(k as i64)
    }
}

impl fmt::Display for GateEfficiencyCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "GateEfficiencyCurve({} bins x {} ps, dark {})",
            self.samples.len(),
            self.dt_ps,
            self.dark_prob
        )
    }
}

/// Synthetic gate shapes for fixtures standing in for measured curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateShape {
    /// Gaussian gate; `fwhm_ps` is the full width at half maximum.
    Gaussian,
    /// Raised-cosine gate with finite support `[-fwhm_ps, +fwhm_ps]`
    /// around the center; `fwhm_ps` is again the width at half maximum.
    RaisedCosine,
}

/// Build a synthetic gate curve with its maximum `peak` in the bin
/// containing `center_ps`, symmetric about that bin modulo the period.
pub fn make_gate_curve(
    shape: GateShape,
    center_ps: f64,
    fwhm_ps: f64,
    peak: f64,
    dt_ps: f64,
    period_ps: f64,
    dark_prob: f64,
) -> Result<GateEfficiencyCurve, CurveError> {
    if !(0.0..=1.0).contains(&peak) {
        return Err(CurveError::PeakOutOfRange(peak));
    }
    if fwhm_ps <= 0.0 {
        return Err(CurveError::NonPositiveFwhm(fwhm_ps));
    }
    if dt_ps <= 0.0 || !dt_ps.is_finite() {
        return Err(CurveError::NonPositiveBinWidth(dt_ps));
    }
    let bins = period_ps / dt_ps;
    if bins < 0.5 || (bins - bins.round()).abs() > GRID_EPS {
        return Err(CurveError::NonIntegerBinCount { period_ps, dt_ps });
    }
    let n = bins.round() as usize;

    // Snap the center onto the grid so the containing bin holds exactly `peak`.
    let center_bin = {
        let t = center_ps.rem_euclid(period_ps);
        (((t / dt_ps) + GRID_EPS).floor() as usize) % n
    };
    let center_t = center_bin as f64 * dt_ps;

    let samples = (0..n)
        .map(|i| {
            let d = circular_distance(i as f64 * dt_ps - center_t, period_ps);
            let g = match shape {
                GateShape::Gaussian => {
                    (-4.0 * std::f64::consts::LN_2 * (d / fwhm_ps).powi(2)).exp()
                }
                GateShape::RaisedCosine => {
                    if d <= fwhm_ps {
                        0.5 * (1.0 + (std::f64::consts::PI * d / fwhm_ps).cos())
                    } else {
                        0.0
                    }
                }
            };
            peak * g
        })
        .collect();
    GateEfficiencyCurve::new(samples, dt_ps, period_ps, dark_prob)
}

/// Circularly rotate a curve by `delta_ps`, which must be a whole number of
/// bins. The returned curve satisfies `out(t) == in(t - delta_ps)`, i.e. a
/// positive shift delays the gate response.
pub fn shift_curve(
    curve: &GateEfficiencyCurve,
    delta_ps: f64,
) -> Result<GateEfficiencyCurve, CurveError> {
    let k = curve.bins_for_shift(delta_ps)?;
    let n = curve.samples.len() as i64;
    let samples = (0..n)
        .map(|i| curve.samples[(i - k).rem_euclid(n) as usize])
        .collect();
    Ok(GateEfficiencyCurve {
        samples,
        dt_ps: curve.dt_ps,
        period_ps: curve.period_ps,
        dark_prob: curve.dark_prob,
    })
}

/// Change the sampling grid of a curve, preserving the period.
///
/// Coarsening keeps every k-th sample starting at bin 0; refinement
/// interpolates linearly on the periodic extension.
pub fn resample(
    curve: &GateEfficiencyCurve,
    dt_new_ps: f64,
) -> Result<GateEfficiencyCurve, CurveError> {
    if dt_new_ps <= 0.0 || !dt_new_ps.is_finite() {
        return Err(CurveError::NonPositiveBinWidth(dt_new_ps));
    }
    let n = curve.samples.len();
    let ratio = dt_new_ps / curve.dt_ps;
    if is_close(ratio, 1.0) {
        return Ok(curve.clone());
    }
    if ratio > 1.0 {
        // Decimation.
        let k = ratio.round();
        if (ratio - k).abs() > GRID_EPS {
            return Err(CurveError::IncompatibleResample {
                dt_old: curve.dt_ps,
                dt_new: dt_new_ps,
            });
        }
        let k = k as usize;
        if !n.is_multiple_of(k) {
            return Err(CurveError::UnevenDecimation {
                factor: k,
                n_bins: n,
            });
        }
        let samples = curve.samples.iter().step_by(k).copied().collect();
        GateEfficiencyCurve::new(samples, dt_new_ps, curve.period_ps, curve.dark_prob)
    } else {
        // Refinement by linear interpolation.
        let inv = curve.dt_ps / dt_new_ps;
        let m = inv.round();
        if (inv - m).abs() > GRID_EPS {
            return Err(CurveError::IncompatibleResample {
                dt_old: curve.dt_ps,
                dt_new: dt_new_ps,
            });
        }
        let m = m as usize;
        let samples = (0..n * m)
            .map(|j| {
                let i0 = j / m;
                let frac = (j % m) as f64 / m as f64;
                let a = curve.samples[i0];
                let b = curve.samples[(i0 + 1) % n];
                a + (b - a) * frac
            })
            .collect();
        GateEfficiencyCurve::new(samples, dt_new_ps, curve.period_ps, curve.dark_prob)
    }
}

/// The receiver's two gated detectors on a shared time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorPair {
    pub apd0: GateEfficiencyCurve,
    pub apd1: GateEfficiencyCurve,
}

impl DetectorPair {
    pub fn new(apd0: GateEfficiencyCurve, apd1: GateEfficiencyCurve) -> Result<Self, CurveError> {
        if apd0.n_bins() != apd1.n_bins() {
            return Err(CurveError::GridMismatch(format!(
                "{} vs {} bins",
                apd0.n_bins(),
                apd1.n_bins()
            )));
        }
        if !is_close(apd0.dt_ps, apd1.dt_ps) || !is_close(apd0.period_ps, apd1.period_ps) {
            return Err(CurveError::GridMismatch(format!(
                "dt {} vs {} ps, period {} vs {} ps",
                apd0.dt_ps, apd1.dt_ps, apd0.period_ps, apd1.period_ps
            )));
        }
        Ok(Self { apd0, apd1 })
    }

    pub fn n_bins(&self) -> usize {
        self.apd0.n_bins()
    }

    pub fn dt_ps(&self) -> f64 {
        self.apd0.dt_ps()
    }

    pub fn period_ps(&self) -> f64 {
        self.apd0.period_ps()
    }

    /// Shift both curves by the same grid-aligned amount.
    pub fn shifted(&self, delta_ps: f64) -> Result<Self, CurveError> {
        Ok(Self {
            apd0: shift_curve(&self.apd0, delta_ps)?,
            apd1: shift_curve(&self.apd1, delta_ps)?,
        })
    }

    /// Resample both curves onto a new grid.
    pub fn resampled(&self, dt_new_ps: f64) -> Result<Self, CurveError> {
        Ok(Self {
            apd0: resample(&self.apd0, dt_new_ps)?,
            apd1: resample(&self.apd1, dt_new_ps)?,
        })
    }
}

/// Derive the curves of the *logical* detectors for a demodulation mode.
///
/// With two-state demodulation the logical detectors are the physical ones.
/// With four-state demodulation each logical detector sees every pulse
/// through either physical detector with equal probability, so both logical
/// curves are the bin-wise mean of the physical pair (dark counts
/// included). The two returned curves are identical by construction.
pub fn logical_curves(pair: &DetectorPair, mode: DemodMode) -> DetectorPair {
    match mode {
        DemodMode::TwoState => pair.clone(),
        DemodMode::FourState => {
            let mean: Vec<f64> = pair
                .apd0
                .samples
                .iter()
                .zip(&pair.apd1.samples)
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let dark = 0.5 * (pair.apd0.dark_prob + pair.apd1.dark_prob);
            let curve = GateEfficiencyCurve {
                samples: mean,
                dt_ps: pair.apd0.dt_ps,
                period_ps: pair.apd0.period_ps,
                dark_prob: dark,
            };
            DetectorPair {
                apd0: curve.clone(),
                apd1: curve,
            }
        }
    }
}

/// Grid and dark-count metadata stored next to a curve CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CurveSidecar {
    period_ps: f64,
    dt_ps: f64,
    dark0: f64,
    dark1: f64,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    os.into()
}

/// Write a detector pair as `time_ps,eta0,eta1` rows plus a JSON sidecar
/// carrying the period and dark-count probabilities. Values are printed in
/// shortest round-trip form, so a reload reproduces them exactly.
pub fn save_curves_csv(pair: &DetectorPair, path: &Path) -> Result<(), CurveError> {
    let mut out = String::from("time_ps,eta0,eta1\n");
    for i in 0..pair.n_bins() {
        let t = i as f64 * pair.dt_ps();
        out.push_str(&format!(
            "{},{},{}\n",
            t, pair.apd0.samples[i], pair.apd1.samples[i]
        ));
    }
    std::fs::write(path, out).map_err(|source| CurveError::Io {
        path: path.display().to_string(),
        source,
    })?;

    let sidecar = CurveSidecar {
        period_ps: pair.period_ps(),
        dt_ps: pair.dt_ps(),
        dark0: pair.apd0.dark_prob,
        dark1: pair.apd1.dark_prob,
    };
    let meta = sidecar_path(path);
    let body = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&meta, body).map_err(|source| CurveError::Io {
        path: meta.display().to_string(),
        source,
    })
}

/// Load a detector pair from a `time_ps,eta0,eta1` CSV.
///
/// The time column must be a uniform ascending grid starting at 0. If a
/// `<path>.meta.json` sidecar exists it supplies the period and dark-count
/// probabilities; otherwise the period is inferred as `n * dt` and dark
/// counts default to zero.
pub fn load_curves_csv(path: &Path) -> Result<DetectorPair, CurveError> {
    let text = std::fs::read_to_string(path).map_err(|source| CurveError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let display = path.display().to_string();
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| CurveError::Malformed {
        path: display.clone(),
        line: 1,
        reason: "empty file".into(),
    })?;
    if header.trim() != "time_ps,eta0,eta1" {
        return Err(CurveError::Malformed {
            path: display,
            line: 1,
            reason: format!(
                "expected header `time_ps,eta0,eta1`, got `{}`",
                header.trim()
            ),
        });
    }

    let mut times = Vec::new();
    let mut eta0 = Vec::new();
    let mut eta1 = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut field = |name: &str| -> Result<f64, CurveError> {
            fields
                .next()
                .ok_or_else(|| CurveError::Malformed {
                    path: display.clone(),
                    line: idx + 1,
                    reason: format!("missing {name} column"),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| CurveError::Malformed {
                    path: display.clone(),
                    line: idx + 1,
                    reason: format!("bad {name}: {e}"),
                })
        };
        times.push(field("time_ps")?);
        eta0.push(field("eta0")?);
        eta1.push(field("eta1")?);
        if fields.next().is_some() {
            return Err(CurveError::Malformed {
                path: display,
                line: idx + 1,
                reason: "too many columns".into(),
            });
        }
    }
    if times.len() < 2 {
        return Err(CurveError::Malformed {
            path: display,
            line: 1,
            reason: "need at least two rows".into(),
        });
    }

    let dt = times[1] - times[0];
    let uniform = dt > 0.0
        && times[0].abs() <= GRID_EPS * dt
        && times
            .iter()
            .enumerate()
            .all(|(i, &t)| (t - i as f64 * dt).abs() <= GRID_EPS * dt.max(1.0));
    if !uniform {
        return Err(CurveError::IrregularTimeGrid { path: display });
    }

    let meta = sidecar_path(path);
    let (period, dark0, dark1) = if meta.exists() {
        let body = std::fs::read_to_string(&meta).map_err(|source| CurveError::Io {
            path: meta.display().to_string(),
            source,
        })?;
        let sidecar: CurveSidecar =
            serde_json::from_str(&body).map_err(|e| CurveError::BadSidecar {
                path: meta.display().to_string(),
                reason: e.to_string(),
            })?;
        if !is_close(sidecar.dt_ps, dt) || !is_close(sidecar.period_ps, times.len() as f64 * dt) {
            return Err(CurveError::BadSidecar {
                path: meta.display().to_string(),
                reason: "sidecar grid disagrees with CSV".into(),
            });
        }
        (sidecar.period_ps, sidecar.dark0, sidecar.dark1)
    } else {
        (times.len() as f64 * dt, 0.0, 0.0)
    };

    DetectorPair::new(
        GateEfficiencyCurve::new(eta0, dt, period, dark0)?,
        GateEfficiencyCurve::new(eta1, dt, period, dark1)?,
    )
}

/// Shortest distance from `delta` to 0 on a circle of circumference `period`.
fn circular_distance(delta: f64, period: f64) -> f64 {
    let r = delta.rem_euclid(period);
    r.min(period - r)
}

fn is_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= GRID_EPS * a.abs().max(b.abs()).max(1.0)
}

/// Stock fixtures used across the test suite and the CLI defaults.
pub mod fixtures {
    use super::*;

    /// Severely mismatched Gaussian pair: peaks 0.20/0.12 displaced 50 ps
    /// either side of mid-period, FWHM 250 ps, dark probability 1e-5.
    ///
    /// `dt_ps * n_bins` sets the clock period; the canonical instrument
    /// grid is 4.5 ps with 222 bins (999 ps period).
    pub fn severe_mismatch(dt_ps: f64, n_bins: usize) -> DetectorPair {
        let period = dt_ps * n_bins as f64;
        let mid = period / 2.0;
        let apd0 = make_gate_curve(
            GateShape::Gaussian,
            mid - 50.0,
            250.0,
            0.20,
            dt_ps,
            period,
            1e-5,
        )
        .expect("valid fixture");
        let apd1 = make_gate_curve(
            GateShape::Gaussian,
            mid + 50.0,
            250.0,
            0.12,
            dt_ps,
            period,
            1e-5,
        )
        .expect("valid fixture");
        DetectorPair::new(apd0, apd1).expect("same grid")
    }

    /// Perfectly matched Gaussian pair, for no-mismatch baselines.
    pub fn matched(dt_ps: f64, n_bins: usize, peak: f64, dark: f64) -> DetectorPair {
        let period = dt_ps * n_bins as f64;
        let curve = make_gate_curve(
            GateShape::Gaussian,
            period / 2.0,
            250.0,
            peak,
            dt_ps,
            period,
            dark,
        )
        .expect("valid fixture");
        DetectorPair::new(curve.clone(), curve).expect("same grid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gaussian_fixture() -> GateEfficiencyCurve {
        make_gate_curve(GateShape::Gaussian, 500.0, 200.0, 0.2, 5.0, 1000.0, 1e-5).unwrap()
    }

    #[test]
    fn gate_curve_peaks_at_center_bin() {
        let c = gaussian_fixture();
        assert_eq!(c.n_bins(), 200);
        let max_bin = (0..c.n_bins())
            .max_by(|&a, &b| c.samples()[a].partial_cmp(&c.samples()[b]).unwrap())
            .unwrap();
        assert_eq!(max_bin, 100);
        assert_eq!(c.samples()[100], 0.2);
    }

    #[test]
    fn zero_peak_gives_all_zero_curve() {
        let c = make_gate_curve(GateShape::Gaussian, 500.0, 200.0, 0.0, 5.0, 1000.0, 0.0).unwrap();
        assert!(c.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn severe_mismatch_fixture_shape() {
        let pair = fixtures::severe_mismatch(4.5, 222);
        assert_eq!(pair.n_bins(), 222);
        assert!((pair.period_ps() - 999.0).abs() < 1e-9);
        let peak0 = pair.apd0.samples().iter().cloned().fold(0.0, f64::max);
        let peak1 = pair.apd1.samples().iter().cloned().fold(0.0, f64::max);
        assert_eq!(peak0, 0.20);
        assert_eq!(peak1, 0.12);
        // Displaced gates: the maxima sit in different bins.
        let argmax = |c: &GateEfficiencyCurve| {
            (0..c.n_bins())
                .max_by(|&a, &b| c.samples()[a].partial_cmp(&c.samples()[b]).unwrap())
                .unwrap()
        };
        assert!(argmax(&pair.apd0) < argmax(&pair.apd1));
    }

    #[test]
    fn rejects_invalid_construction() {
        assert!(matches!(
            make_gate_curve(GateShape::Gaussian, 500.0, 200.0, 1.2, 5.0, 1000.0, 0.0),
            Err(CurveError::PeakOutOfRange(_))
        ));
        assert!(matches!(
            make_gate_curve(GateShape::Gaussian, 500.0, 200.0, 0.2, 4.5, 1000.0, 0.0),
            Err(CurveError::NonIntegerBinCount { .. })
        ));
        assert!(matches!(
            GateEfficiencyCurve::new(vec![0.5, 1.5], 1.0, 2.0, 0.0),
            Err(CurveError::SampleOutOfRange { bin: 1, .. })
        ));
        assert!(matches!(
            GateEfficiencyCurve::new(vec![0.5; 4], 1.0, 4.0, 1.0),
            Err(CurveError::DarkOutOfRange(_))
        ));
    }

    #[test]
    fn shift_identity_cases() {
        let c = gaussian_fixture();
        assert_eq!(shift_curve(&c, 0.0).unwrap(), c);
        assert_eq!(shift_curve(&c, 1000.0).unwrap(), c);
        assert_eq!(shift_curve(&c, -1000.0).unwrap(), c);
        let once = shift_curve(&c, 5.0).unwrap();
        assert_eq!(shift_curve(&once, -5.0).unwrap(), c);
    }

    #[test]
    fn shift_rejects_off_grid() {
        let c = gaussian_fixture();
        assert!(matches!(
            shift_curve(&c, 2.5),
            Err(CurveError::MisalignedShift { .. })
        ));
    }

    #[test]
    fn shift_moves_gate_later() {
        let c = gaussian_fixture();
        let shifted = shift_curve(&c, 25.0).unwrap();
        // out(t) == in(t - delta): the peak moves from bin 100 to bin 105.
        assert_eq!(shifted.samples()[105], 0.2);
    }

    #[test]
    fn logical_curves_two_state_is_identity() {
        let pair = fixtures::severe_mismatch(4.5, 222);
        assert_eq!(logical_curves(&pair, DemodMode::TwoState), pair);
    }

    #[test]
    fn logical_curves_four_state_averages_constants() {
        let apd0 = GateEfficiencyCurve::constant(0.2, 10, 100.0, 0.0).unwrap();
        let apd1 = GateEfficiencyCurve::constant(0.1, 10, 100.0, 0.0).unwrap();
        let pair = DetectorPair::new(apd0, apd1).unwrap();
        let logical = logical_curves(&pair, DemodMode::FourState);
        assert!(logical
            .apd0
            .samples()
            .iter()
            .all(|&s| (s - 0.15).abs() < 1e-15));
        assert_eq!(logical.apd0, logical.apd1);
    }

    #[test]
    fn resample_identity() {
        let c = gaussian_fixture();
        assert_eq!(resample(&c, 5.0).unwrap(), c);
    }

    #[test]
    fn decimation_keeps_every_kth_sample() {
        let pair = fixtures::severe_mismatch(4.5, 220);
        let coarse = resample(&pair.apd0, 49.5).unwrap();
        assert_eq!(coarse.n_bins(), 20);
        for j in 0..20 {
            assert_eq!(coarse.samples()[j], pair.apd0.samples()[11 * j]);
        }
        assert!((coarse.period_ps() - pair.period_ps()).abs() < 1e-9);
    }

    #[test]
    fn decimation_rejects_uneven_factor() {
        // 222 bins are not divisible by 11.
        let pair = fixtures::severe_mismatch(4.5, 222);
        assert!(matches!(
            resample(&pair.apd0, 49.5),
            Err(CurveError::UnevenDecimation { factor: 11, .. })
        ));
    }

    #[test]
    fn decimate_then_interpolate_band_limited_curve() {
        // Smooth gate well above the coarse grid's resolvable width.
        let c = make_gate_curve(GateShape::Gaussian, 495.0, 500.0, 0.2, 4.5, 990.0, 0.0).unwrap();
        let coarse = resample(&c, 49.5).unwrap();
        let back = resample(&coarse, 4.5).unwrap();
        let max_err = c
            .samples()
            .iter()
            .zip(back.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 0.01 * 0.2, "max abs error {max_err}");
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let pair = fixtures::severe_mismatch(4.5, 222);
        save_curves_csv(&pair, &path).unwrap();
        let loaded = load_curves_csv(&path).unwrap();
        assert_eq!(loaded, pair);
    }

    #[test]
    fn csv_load_without_sidecar_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        std::fs::write(&path, "time_ps,eta0,eta1\n0,0.1,0.2\n5,0.2,0.3\n").unwrap();
        let pair = load_curves_csv(&path).unwrap();
        assert_eq!(pair.n_bins(), 2);
        assert_eq!(pair.apd0.dark_prob(), 0.0);
        assert!((pair.period_ps() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn csv_rejects_out_of_range_efficiency() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "time_ps,eta0,eta1\n0,1.2,0.2\n5,0.2,0.3\n").unwrap();
        assert!(matches!(
            load_curves_csv(&path),
            Err(CurveError::SampleOutOfRange { .. })
        ));
    }

    #[test]
    fn csv_rejects_irregular_time_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "time_ps,eta0,eta1\n0,0.1,0.2\n5,0.2,0.3\n12,0.1,0.2\n",
        )
        .unwrap();
        assert!(matches!(
            load_curves_csv(&path),
            Err(CurveError::IrregularTimeGrid { .. })
        ));
    }

    #[test]
    fn csv_rejects_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "time_ps,eta0,eta1\n0,0.1\n").unwrap();
        assert!(matches!(
            load_curves_csv(&path),
            Err(CurveError::Malformed { .. })
        ));
    }

    proptest! {
        #[test]
        fn shift_is_periodic_and_composes(
            samples in proptest::collection::vec(0.0f64..=1.0, 4..64),
            a in -20i64..20,
            b in -20i64..20,
            k in -3i64..=3,
        ) {
            let n = samples.len();
            let dt = 4.5;
            let c = GateEfficiencyCurve::new(samples, dt, dt * n as f64, 0.0).unwrap();
            let period = c.period_ps();

            let whole = shift_curve(&c, k as f64 * period).unwrap();
            prop_assert_eq!(&whole, &c);

            let ab = shift_curve(&shift_curve(&c, a as f64 * dt).unwrap(), b as f64 * dt).unwrap();
            let combined = shift_curve(&c, (a + b) as f64 * dt).unwrap();
            prop_assert_eq!(ab, combined);
        }

        #[test]
        fn four_state_symmetrization_and_mean_preservation(
            s0 in proptest::collection::vec(0.0f64..=1.0, 16),
            s1 in proptest::collection::vec(0.0f64..=1.0, 16),
            shift_bins in 0i64..16,
        ) {
            let dt = 4.5;
            let pair = DetectorPair::new(
                GateEfficiencyCurve::new(s0, dt, dt * 16.0, 1e-5).unwrap(),
                GateEfficiencyCurve::new(s1, dt, dt * 16.0, 2e-5).unwrap(),
            ).unwrap();
            let shifted = pair.shifted(shift_bins as f64 * dt).unwrap();

            let logical = logical_curves(&shifted, DemodMode::FourState);
            // Bin-wise identical, exactly.
            prop_assert_eq!(logical.apd0.samples(), logical.apd1.samples());
            prop_assert_eq!(logical.apd0.dark_prob(), logical.apd1.dark_prob());

            // Both modes preserve the bin-wise mean of the pair.
            for mode in [DemodMode::TwoState, DemodMode::FourState] {
                let l = logical_curves(&shifted, mode);
                for i in 0..16 {
                    let phys = 0.5 * (shifted.apd0.samples()[i] + shifted.apd1.samples()[i]);
                    let log = 0.5 * (l.apd0.samples()[i] + l.apd1.samples()[i]);
                    prop_assert!((phys - log).abs() < 1e-15);
                }
            }
        }

        #[test]
        fn decimation_commutes_with_coarse_shifts(
            samples in proptest::collection::vec(0.0f64..=1.0, 44),
            j in -4i64..=4,
        ) {
            let dt = 4.5;
            let c = GateEfficiencyCurve::new(samples, dt, dt * 44.0, 0.0).unwrap();
            let coarse_dt = 49.5; // 44 bins / 11 = 4 coarse bins
            let shift = j as f64 * coarse_dt;

            let a = resample(&shift_curve(&c, shift).unwrap(), coarse_dt).unwrap();
            let b = shift_curve(&resample(&c, coarse_dt).unwrap(), shift).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
