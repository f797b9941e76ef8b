//! Resonance and saturation fits, and write-back into a [`DeviceSpec`].
//!
//! Resonance sweeps are fitted with the second-order magnitude written in
//! terms of its on-resonance value:
//!
//! ```text
//! A(f) = P / (Q·sqrt((1 - r²)² + (r/Q)²)),   r = f/f0
//! ```
//!
//! so `A(f0) = P`. Voltage data are fitted with `θ = θ_sat·tanh(g·V/θ_sat)`,
//! solved in `(g, u = 1/θ_sat)` so the linear regime (`u → 0`) stays regular.
//! Residuals are linear in amplitude.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::actuation::{fundamental_per_vpp, DriveShape};
use crate::device::{Axis, DeviceSpec, SpecError};
use crate::lm::{self, LeastSquares, LmConfig};
use crate::numfmt::fmt_sig;
use crate::resonator::amplitude_response;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrateError {
    #[error("dataset `{label}`: {reason}")]
    InvalidDataset { label: String, reason: String },
    #[error("dataset `{label}`: amplitude maximum is at the edge of the frequency span")]
    PeakNotInterior { label: String },
    #[error("dataset `{label}`: data are degenerate ({reason})")]
    DegenerateData { label: String, reason: String },
    #[error("fit of `{label}` did not converge in {iterations} iterations")]
    NotConverged {
        label: String,
        iterations: usize,
        best: Box<FitResult>,
    },
    #[error("fit of `{label}` did not converge in {iterations} iterations")]
    SaturationNotConverged {
        label: String,
        iterations: usize,
        best: Box<SaturationFit>,
    },
    #[error("initial guess is outside the model domain")]
    InvalidGuess,
    #[error("{axis} axis: {source}")]
    Axis {
        axis: Axis,
        #[source]
        source: Box<CalibrateError>,
    },
    #[error("calibrated spec is invalid: {0}")]
    Spec(String),
}

impl From<SpecError> for CalibrateError {
    fn from(e: SpecError) -> Self {
        CalibrateError::Spec(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CalibrateError>;

pub const MIN_SWEEP_ROWS: usize = 8;
pub const MIN_VOLTAGE_ROWS: usize = 4;

/// Saturation angles larger than this multiple of the largest observed angle
/// are reported as unbounded.
pub const UNBOUNDED_SAT_RATIO: f64 = 100.0;

/// Measured amplitude versus frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepDataset {
    pub label: String,
    /// (Hz, arbitrary amplitude)
    rows: Vec<(f64, f64)>,
}

impl SweepDataset {
    pub fn new(label: impl Into<String>, rows: Vec<(f64, f64)>) -> Result<Self> {
        let label = label.into();
        let bad = |reason: String| CalibrateError::InvalidDataset {
            label: label.clone(),
            reason,
        };
        if rows.len() < MIN_SWEEP_ROWS {
            return Err(bad(format!(
                "needs at least {MIN_SWEEP_ROWS} rows, got {}",
                rows.len()
            )));
        }
        for (i, &(f, a)) in rows.iter().enumerate() {
            if !(f.is_finite() && f > 0.0) {
                return Err(bad(format!("row {}: frequency {f} must be positive", i + 1)));
            }
            if !(a.is_finite() && a >= 0.0) {
                return Err(bad(format!("row {}: amplitude {a} must be >= 0", i + 1)));
            }
        }
        if let Some(i) = rows.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(bad(format!(
                "frequencies must be strictly increasing (row {})",
                i + 2
            )));
        }
        Ok(Self { label, rows })
    }

    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Optical angle versus drive level.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageDataset {
    pub label: String,
    /// (Vpp, optical deg)
    rows: Vec<(f64, f64)>,
}

impl VoltageDataset {
    pub fn new(label: impl Into<String>, rows: Vec<(f64, f64)>) -> Result<Self> {
        let label = label.into();
        let bad = |reason: String| CalibrateError::InvalidDataset {
            label: label.clone(),
            reason,
        };
        if rows.len() < MIN_VOLTAGE_ROWS {
            return Err(bad(format!(
                "needs at least {MIN_VOLTAGE_ROWS} rows, got {}",
                rows.len()
            )));
        }
        for (i, &(v, a)) in rows.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(format!("row {}: voltage {v} must be >= 0", i + 1)));
            }
            if !a.is_finite() {
                return Err(bad(format!("row {}: angle must be finite", i + 1)));
            }
        }
        if !rows.iter().any(|&(v, _)| v > 0.0) {
            return Err(bad("no row has a positive voltage".into()));
        }
        Ok(Self { label, rows })
    }

    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianParams {
    /// Hz
    pub f0: f64,
    pub q_factor: f64,
    /// Amplitude at f0.
    pub peak_amplitude: f64,
}

impl LorentzianParams {
    #[cfg(test)]
    fn to_vec(self) -> Vec<f64> {
        vec![self.f0, self.q_factor, self.peak_amplitude]
    }

    fn from_slice(p: &[f64]) -> Self {
        Self {
            f0: p[0],
            q_factor: p[1],
            peak_amplitude: p[2],
        }
    }

    fn in_domain(&self) -> bool {
        self.f0 > 0.0 && self.q_factor > 0.0 && self.f0.is_finite() && self.q_factor.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: LorentzianParams,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after the start and after each accepted step.
    pub history: Vec<f64>,
}

/// Model amplitude at `f`.
pub fn lorentzian(p: &LorentzianParams, f: f64) -> f64 {
    let r = f / p.f0;
    let d = (1.0 - r * r).powi(2) + (r / p.q_factor).powi(2);
    p.peak_amplitude / (p.q_factor * d.sqrt())
}

/// `[∂A/∂f0, ∂A/∂Q, ∂A/∂P]` at `f`.
pub fn lorentzian_gradient(p: &LorentzianParams, f: f64) -> [f64; 3] {
    let (f0, q, peak) = (p.f0, p.q_factor, p.peak_amplitude);
    let r = f / f0;
    let one_minus = 1.0 - r * r;
    let d = one_minus * one_minus + (r / q).powi(2);
    let sqrt_d = d.sqrt();
    let d32 = d * sqrt_d;
    let dd_dr = -4.0 * r * one_minus + 2.0 * r / (q * q);
    let dr_df0 = -r / f0;
    let dd_dq = -2.0 * r * r / (q * q * q);
    [
        -0.5 * peak / q * dd_dr * dr_df0 / d32,
        -peak / (q * q * sqrt_d) - 0.5 * peak / q * dd_dq / d32,
        1.0 / (q * sqrt_d),
    ]
}

struct LorentzianProblem<'a> {
    rows: &'a [(f64, f64)],
}

impl LeastSquares for LorentzianProblem<'_> {
    fn n_params(&self) -> usize {
        3
    }

    fn residuals(&self, params: &[f64]) -> Option<DVector<f64>> {
        let p = LorentzianParams::from_slice(params);
        if !p.in_domain() {
            return None;
        }
        Some(DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|&(f, a)| lorentzian(&p, f) - a),
        ))
    }

    fn jacobian(&self, params: &[f64]) -> DMatrix<f64> {
        let p = LorentzianParams::from_slice(params);
        DMatrix::from_fn(self.rows.len(), 3, |i, j| lorentzian_gradient(&p, self.rows[i].0)[j])
    }
}

/// Starting point from the grid maximum and the half-power width.
pub fn initial_guess(data: &SweepDataset) -> Result<LorentzianParams> {
    let rows = data.rows();
    let (imax, &(f_peak, a_peak)) = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("validated non-empty");
    let a_min = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    if a_peak <= a_min {
        return Err(CalibrateError::DegenerateData {
            label: data.label.clone(),
            reason: "amplitude is constant".into(),
        });
    }
    if imax == 0 || imax == rows.len() - 1 {
        return Err(CalibrateError::PeakNotInterior {
            label: data.label.clone(),
        });
    }
    let half = a_peak * std::f64::consts::FRAC_1_SQRT_2;
    let cross = |i: usize, j: usize| {
        let ((f1, a1), (f2, a2)) = (rows[i], rows[j]);
        f1 + (half - a1) * (f2 - f1) / (a2 - a1)
    };
    let f_lo = (1..=imax).rev().find(|&i| rows[i - 1].1 < half).map(|i| cross(i - 1, i));
    let f_hi = (imax..rows.len() - 1).find(|&i| rows[i + 1].1 < half).map(|i| cross(i, i + 1));
    let span = rows[rows.len() - 1].0 - rows[0].0;
    let width = match (f_lo, f_hi) {
        (Some(lo), Some(hi)) => hi - lo,
        (Some(lo), None) => 2.0 * (f_peak - lo),
        (None, Some(hi)) => 2.0 * (hi - f_peak),
        (None, None) => span,
    };
    Ok(LorentzianParams {
        f0: f_peak,
        q_factor: (f_peak / width.max(f64::MIN_POSITIVE)).max(0.6),
        peak_amplitude: a_peak,
    })
}

/// Least-squares fit of (f0, Q, peak). Without a guess, starts from
/// [`initial_guess`].
pub fn fit_lorentzian(data: &SweepDataset, guess: Option<LorentzianParams>) -> Result<FitResult> {
    let data_guess = initial_guess(data)?;
    let start = guess.unwrap_or(data_guess);
    // Fitting in units of the grid maximum keeps the iteration path
    // independent of the amplitude scale.
    let unit = data_guess.peak_amplitude;
    let rows: Vec<(f64, f64)> = data.rows().iter().map(|&(f, a)| (f, a / unit)).collect();
    let problem = LorentzianProblem { rows: &rows };
    let start = [start.f0, start.q_factor, start.peak_amplitude / unit];
    let out = lm::minimize(&problem, &start, &LmConfig::default()).ok_or(CalibrateError::InvalidGuess)?;
    let result = FitResult {
        params: LorentzianParams {
            f0: out.params[0],
            q_factor: out.params[1],
            peak_amplitude: out.params[2] * unit,
        },
        residual_rms: out.residual_rms * unit,
        iterations: out.iterations,
        converged: out.converged,
        history: out.history.iter().map(|c| c * unit * unit).collect(),
    };
    if !result.converged {
        return Err(CalibrateError::NotConverged {
            label: data.label.clone(),
            iterations: result.iterations,
            best: Box::new(result),
        });
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaturationFit {
    /// Optical deg per volt of drive fundamental.
    pub small_signal_gain: f64,
    /// Optical deg; `None` when the data show no resolvable saturation.
    pub sat_angle: Option<f64>,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `tanh(x)/x` and its derivative, with series near zero.
fn tanhc(x: f64) -> (f64, f64) {
    if x.abs() < 1e-3 {
        let x2 = x * x;
        (
            1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 15.0,
            x * (-2.0 / 3.0 + 8.0 * x2 / 15.0),
        )
    } else {
        let t = x.tanh();
        let sech2 = 1.0 - t * t;
        (t / x, (x * sech2 - t) / (x * x))
    }
}

/// θ for effective fundamental volts `v`, with `u = 1/θ_sat`.
fn saturation_model(g: f64, u: f64, v: f64) -> f64 {
    g * v * tanhc(g * u * v).0
}

struct SaturationProblem {
    /// (effective fundamental volts, deg)
    rows: Vec<(f64, f64)>,
}

impl LeastSquares for SaturationProblem {
    fn n_params(&self) -> usize {
        2
    }

    fn residuals(&self, p: &[f64]) -> Option<DVector<f64>> {
        if !(p[0] > 0.0) {
            return None;
        }
        Some(DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|&(v, a)| saturation_model(p[0], p[1], v) - a),
        ))
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let (g, u) = (p[0], p[1]);
        DMatrix::from_fn(self.rows.len(), 2, |i, j| {
            let v = self.rows[i].0;
            let x = g * u * v;
            let (c, dc) = tanhc(x);
            if j == 0 {
                // ∂(g·v·c(g·u·v))/∂g
                v * c + g * v * dc * u * v
            } else {
                g * v * dc * g * v
            }
        })
    }
}

/// Fits gain and saturation angle to (Vpp, deg) rows. `volts_per_vpp`
/// converts drive level to effective fundamental volts at the operating
/// frequency.
pub fn fit_saturation(data: &VoltageDataset, volts_per_vpp: f64) -> Result<SaturationFit> {
    assert!(volts_per_vpp > 0.0, "volts_per_vpp must be positive");
    let rows: Vec<(f64, f64)> = data
        .rows()
        .iter()
        .map(|&(vpp, a)| (vpp * volts_per_vpp, a))
        .collect();
    let max_angle = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    if max_angle <= 0.0 {
        return Err(CalibrateError::DegenerateData {
            label: data.label.clone(),
            reason: "all angles are zero".into(),
        });
    }
    // Steepest secant through the origin bounds the small-signal slope.
    let g0 = rows
        .iter()
        .filter(|r| r.0 > 0.0)
        .map(|r| r.1 / r.0)
        .fold(0.0, f64::max);
    if !(g0 > 0.0) {
        return Err(CalibrateError::DegenerateData {
            label: data.label.clone(),
            reason: "no positive angle at a positive voltage".into(),
        });
    }
    let u0 = 1.0 / (2.0 * max_angle);
    let problem = SaturationProblem { rows };
    let out = lm::minimize(&problem, &[g0, u0], &LmConfig::default()).ok_or(CalibrateError::InvalidGuess)?;
    let (g, u) = (out.params[0], out.params[1]);
    let sat_angle = (u > 0.0 && 1.0 / u <= UNBOUNDED_SAT_RATIO * max_angle).then(|| 1.0 / u);
    let fit = SaturationFit {
        small_signal_gain: g,
        sat_angle,
        residual_rms: out.residual_rms,
        iterations: out.iterations,
        converged: out.converged,
    };
    if !fit.converged {
        return Err(CalibrateError::SaturationNotConverged {
            label: data.label.clone(),
            iterations: fit.iterations,
            best: Box::new(fit),
        });
    }
    Ok(fit)
}

/// Multiplicative Gaussian noise, `a·(1 + σ·n)` with `n ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub relative: f64,
    pub seed: u64,
}

fn apply_noise(values: &mut [f64], noise: Option<Noise>) {
    let Some(noise) = noise else { return };
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let normal = Normal::new(0.0, noise.relative).expect("finite noise level");
    for v in values {
        *v = (*v * (1.0 + normal.sample(&mut rng))).max(0.0);
    }
}

/// Samples of [`lorentzian`] on `freqs`, optionally with noise.
pub fn synthesize_sweep(
    label: &str,
    params: &LorentzianParams,
    freqs: &[f64],
    noise: Option<Noise>,
) -> Result<SweepDataset> {
    let mut amps: Vec<f64> = freqs.iter().map(|&f| lorentzian(params, f)).collect();
    apply_noise(&mut amps, noise);
    SweepDataset::new(label, freqs.iter().copied().zip(amps).collect())
}

/// The datasets that can update one axis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AxisDatasets {
    /// Free-standing sweep: updates f0 and Q.
    pub sweep: Option<SweepDataset>,
    /// Sweep taken in the mounted fixture: updates the mounted Q only.
    pub mounted_sweep: Option<SweepDataset>,
    /// Angle versus drive at f0: updates gain and saturation angle.
    pub voltage: Option<VoltageDataset>,
}

impl AxisDatasets {
    pub fn is_empty(&self) -> bool {
        self.sweep.is_none() && self.mounted_sweep.is_none() && self.voltage.is_none()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationInputs {
    pub vertical: AxisDatasets,
    pub horizontal: AxisDatasets,
}

impl CalibrationInputs {
    pub fn axis(&self, axis: Axis) -> &AxisDatasets {
        match axis {
            Axis::Vertical => &self.vertical,
            Axis::Horizontal => &self.horizontal,
        }
    }

    pub fn axis_mut(&mut self, axis: Axis) -> &mut AxisDatasets {
        match axis {
            Axis::Vertical => &mut self.vertical,
            Axis::Horizontal => &mut self.horizontal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldChange {
    pub axis: Axis,
    pub field: &'static str,
    pub old: f64,
    pub new: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationReport {
    pub changes: Vec<FieldChange>,
    pub notes: Vec<String>,
}

impl CalibrationReport {
    /// Plain text: one `axis.field: old -> new` line per change in fit order,
    /// then notes.
    pub fn to_text(&self) -> String {
        let mut out = String::from("calibration\n");
        if self.changes.is_empty() {
            out.push_str("  no fields updated\n");
        }
        for c in &self.changes {
            let rel = if c.old != 0.0 { (c.new - c.old) / c.old * 100.0 } else { 0.0 };
            let _ = writeln!(
                out,
                "  {}.{}: {} -> {} ({}%)",
                c.axis,
                c.field,
                fmt_sig(c.old, 6),
                fmt_sig(c.new, 6),
                fmt_sig(rel, 3)
            );
        }
        for n in &self.notes {
            let _ = writeln!(out, "  note: {n}");
        }
        out
    }
}

/// Drive used for voltage datasets: 50% square at resonance.
pub fn voltage_dataset_volts_per_vpp(spec: &DeviceSpec, axis: Axis) -> f64 {
    let r = spec.resonator(axis);
    fundamental_per_vpp(DriveShape::Square, 0.5) * r.normalized_magnitude(r.f0)
}

/// Applies every available fit and returns the updated spec. Fields without
/// data are left untouched.
pub fn calibrate_device(spec: &DeviceSpec, inputs: &CalibrationInputs) -> Result<(DeviceSpec, CalibrationReport)> {
    let mut out = spec.clone();
    let mut report = CalibrationReport::default();
    for axis in Axis::BOTH {
        calibrate_axis(&mut out, axis, inputs.axis(axis), &mut report).map_err(|e| CalibrateError::Axis {
            axis,
            source: Box::new(e),
        })?;
    }
    out.validate()?;
    Ok((out, report))
}

fn calibrate_axis(spec: &mut DeviceSpec, axis: Axis, data: &AxisDatasets, report: &mut CalibrationReport) -> Result<()> {
    let mut change = |field, old, new| report.changes.push(FieldChange { axis, field, old, new });
    if let Some(sweep) = &data.sweep {
        let fit = fit_lorentzian(sweep, None)?;
        let mode = *spec.axis(axis);
        change("f0_hz", mode.f0, fit.params.f0);
        change("q", mode.q_factor, fit.params.q_factor);
        spec.set_f0(axis, fit.params.f0);
        spec.axis_mut(axis).q_factor = fit.params.q_factor;
    }
    if let Some(sweep) = &data.mounted_sweep {
        let fit = fit_lorentzian(sweep, None)?;
        change("q_mounted", spec.mounted_q(axis), fit.params.q_factor);
        spec.set_mounted_q(axis, fit.params.q_factor);
    }
    if let Some(volts) = &data.voltage {
        let fit = fit_saturation(volts, voltage_dataset_volts_per_vpp(spec, axis))?;
        let mode = *spec.axis(axis);
        change("resonant_gain_deg_per_v", mode.resonant_gain, fit.small_signal_gain);
        spec.axis_mut(axis).resonant_gain = fit.small_signal_gain;
        match fit.sat_angle {
            Some(sat) => {
                change("sat_angle_deg", mode.sat_angle, sat);
                spec.axis_mut(axis).sat_angle = sat;
            }
            None => report.notes.push(format!(
                "{axis}: no saturation resolved in `{}`; sat_angle_deg kept at {}",
                volts.label,
                fmt_sig(mode.sat_angle, 6)
            )),
        }
    }
    Ok(())
}

/// Synthetic datasets for every fitted field of `spec`:
/// - a free sweep over f0 ± 8 bandwidths (801 points) of the unit-gain response
/// - the same for the mounted Q
/// - the plateau drive curve 0..=18 Vpp in 1 V steps
///
/// With noise, each dataset draws from its own stream seeded `seed + k`.
pub fn synthesize_device_datasets(spec: &DeviceSpec, noise: Option<Noise>) -> Result<CalibrationInputs> {
    let mut inputs = CalibrationInputs::default();
    let mut stream = 0u64;
    let mut next_noise = || {
        let n = noise.map(|n| Noise {
            relative: n.relative,
            seed: n.seed.wrapping_add(stream),
        });
        stream += 1;
        n
    };
    for axis in Axis::BOTH {
        let mode = spec.axis(axis);
        let sweep_for = |q: f64| {
            let half_span = 8.0 * mode.f0 / q;
            let n = 801;
            let freqs: Vec<f64> = (0..n)
                .map(|i| mode.f0 - half_span + 2.0 * half_span * i as f64 / (n - 1) as f64)
                .collect();
            let params = LorentzianParams {
                f0: mode.f0,
                q_factor: q,
                // unit static gain: |H(f0)| = Q
                peak_amplitude: amplitude_response(&spec.resonator(axis), mode.f0).0,
            };
            (params, freqs)
        };
        let (p, f) = sweep_for(mode.q_factor);
        let sweep = synthesize_sweep(&format!("{axis}_sweep"), &p, &f, next_noise())?;
        let (p, f) = sweep_for(spec.mounted_q(axis));
        let p = LorentzianParams {
            peak_amplitude: p.q_factor,
            ..p
        };
        let mounted = synthesize_sweep(&format!("{axis}_mounted_sweep"), &p, &f, next_noise())?;

        let mut angles: Vec<f64> = (0..=18)
            .map(|v| mode.scan_angle(v as f64).expect("valid default drive"))
            .collect();
        apply_noise(&mut angles, next_noise());
        let voltage = VoltageDataset::new(
            format!("{axis}_voltage"),
            angles.into_iter().enumerate().map(|(v, a)| (v as f64, a)).collect(),
        )?;
        *inputs.axis_mut(axis) = AxisDatasets {
            sweep: Some(sweep),
            mounted_sweep: Some(mounted),
            voltage: Some(voltage),
        };
    }
    Ok(inputs)
}
