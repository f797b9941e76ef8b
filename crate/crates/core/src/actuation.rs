//! Drive waveforms and the volts-to-optical-angle chain.
//!
//! Only the Fourier fundamental of the drive reaches the mirror: with Q in
//! the hundreds, the 3rd harmonic of a square drive sits thousands of
//! half-bandwidths away from resonance. The fundamental passes through the
//! peak-normalized resonator magnitude and then a tanh saturation law in the
//! optical-angle domain:
//!
//! ```text
//! θ = θ_sat · tanh(G · V_fund · |H_n(f)| / θ_sat)
//! ```

use std::f64::consts::{PI, TAU};

use thiserror::Error;

use crate::resonator::{ResonatorError, ResonatorParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActuationError {
    #[error("invalid drive signal `{field}`: {reason}")]
    InvalidSignal { field: &'static str, reason: String },
    #[error("invalid saturation model `{field}`: {reason}")]
    InvalidSaturation { field: &'static str, reason: String },
    #[error("drive is not differential")]
    NotDifferential,
    #[error("drive frequency {f} Hz outside the modelled range (0, {limit}] Hz")]
    FrequencyOutOfRange { f: f64, limit: f64 },
    #[error("drive voltages must be non-negative and ascending")]
    BadVoltageList,
    #[error(transparent)]
    Resonator(#[from] ResonatorError),
}

pub type Result<T> = std::result::Result<T, ActuationError>;

/// tanh argument reached at the plateau drive (12 Vpp) by the default
/// calibration. sech²(2) ≈ 0.071, so the marginal gain there is ~7% of the
/// small-signal slope.
pub const PLATEAU_TANH_ARGUMENT: f64 = 2.0;

/// Drive level at which the measured scan angles plateau.
pub const PLATEAU_VPP: f64 = 12.0;

/// Marginal-gain fraction used to flag the onset of saturation.
pub const MARGINAL_GAIN_THRESHOLD: f64 = 0.15;

/// Highest drive frequency the chain is evaluated at, as a multiple of f0.
pub const MAX_DRIVE_RATIO: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveShape {
    Square,
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSignal {
    pub shape: DriveShape,
    pub vpp: f64,
    pub frequency: f64,
    /// High fraction of the period (square only).
    pub duty: f64,
    pub phase_deg: f64,
    pub differential: bool,
}

impl DriveSignal {
    /// 50% duty square wave, the model of a periodic pulse drive.
    pub fn square(vpp: f64, frequency: f64) -> Self {
        Self {
            shape: DriveShape::Square,
            vpp,
            frequency,
            duty: 0.5,
            phase_deg: 0.0,
            differential: false,
        }
    }

    pub fn sine(vpp: f64, frequency: f64) -> Self {
        Self {
            shape: DriveShape::Sine,
            ..Self::square(vpp, frequency)
        }
    }

    pub fn with_duty(mut self, duty: f64) -> Self {
        self.duty = duty;
        self
    }

    pub fn with_phase(mut self, phase_deg: f64) -> Self {
        self.phase_deg = phase_deg;
        self
    }

    pub fn differential(mut self) -> Self {
        self.differential = true;
        self
    }

    pub fn with_vpp(mut self, vpp: f64) -> Self {
        self.vpp = vpp;
        self
    }

    pub fn with_frequency(mut self, frequency: f64) -> Self {
        self.frequency = frequency;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vpp >= 0.0 && self.vpp.is_finite()) {
            return Err(bad_signal("vpp", format!("must be >= 0, got {}", self.vpp)));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(bad_signal(
                "frequency",
                format!("must be > 0, got {}", self.frequency),
            ));
        }
        if !(self.duty > 0.0 && self.duty < 1.0) {
            return Err(bad_signal(
                "duty",
                format!("must lie in (0, 1), got {}", self.duty),
            ));
        }
        if !self.phase_deg.is_finite() {
            return Err(bad_signal("phase", "must be finite".into()));
        }
        Ok(())
    }

    /// Instantaneous zero-mean drive voltage.
    pub fn value_at(&self, t: f64) -> f64 {
        let cycle = (self.frequency * t + self.phase_deg / 360.0).rem_euclid(1.0);
        match self.shape {
            DriveShape::Sine => 0.5 * self.vpp * (TAU * cycle).sin(),
            DriveShape::Square => {
                if cycle < self.duty {
                    self.vpp * (1.0 - self.duty)
                } else {
                    -self.vpp * self.duty
                }
            }
        }
    }
}

fn bad_signal(field: &'static str, reason: String) -> ActuationError {
    ActuationError::InvalidSignal { field, reason }
}

/// Amplitude of the first Fourier harmonic, `(2V/π)·sin(πd)` for a square
/// wave and `V/2` for a sine.
pub fn fundamental_amplitude(signal: &DriveSignal) -> Result<f64> {
    signal.validate()?;
    Ok(fundamental_per_vpp(signal.shape, signal.duty) * signal.vpp)
}

/// Fundamental amplitude produced by one volt peak-to-peak.
pub fn fundamental_per_vpp(shape: DriveShape, duty: f64) -> f64 {
    match shape {
        DriveShape::Square => 2.0 / PI * (PI * duty).sin(),
        DriveShape::Sine => 0.5,
    }
}

/// Splits a differential drive into its two legs, the second shifted by
/// 180°. Phases are reported in `[0, 360)`.
pub fn differential_pair(signal: &DriveSignal) -> Result<(DriveSignal, DriveSignal)> {
    signal.validate()?;
    if !signal.differential {
        return Err(ActuationError::NotDifferential);
    }
    let first = signal.with_phase(signal.phase_deg.rem_euclid(360.0));
    let second = signal.with_phase((signal.phase_deg + 180.0).rem_euclid(360.0));
    Ok((first, second))
}

/// Phenomenological tanh saturation in the optical-angle domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationModel {
    /// Asymptotic full optical scan angle (deg).
    pub sat_angle: f64,
    /// Optical deg per volt of drive fundamental, at resonance, small signal.
    pub small_signal_gain: f64,
}

impl SaturationModel {
    pub fn new(sat_angle: f64, small_signal_gain: f64) -> Result<Self> {
        if !(sat_angle > 0.0 && sat_angle.is_finite()) {
            return Err(ActuationError::InvalidSaturation {
                field: "sat_angle",
                reason: format!("must be > 0, got {sat_angle}"),
            });
        }
        if !(small_signal_gain > 0.0 && small_signal_gain.is_finite()) {
            return Err(ActuationError::InvalidSaturation {
                field: "small_signal_gain",
                reason: format!("must be > 0, got {small_signal_gain}"),
            });
        }
        Ok(Self {
            sat_angle,
            small_signal_gain,
        })
    }

    /// Saturated angle for an effective (post-resonator) fundamental voltage.
    pub fn angle(&self, effective_volts: f64) -> f64 {
        self.sat_angle * (self.small_signal_gain * effective_volts / self.sat_angle).tanh()
    }
}

/// Full optical scan angle (deg) in steady state.
pub fn steady_state_optical_angle(
    resonator: &ResonatorParams,
    signal: &DriveSignal,
    sat: &SaturationModel,
) -> Result<f64> {
    resonator.validate()?;
    let v_fund = fundamental_amplitude(signal)?;
    let limit = MAX_DRIVE_RATIO * resonator.f0;
    if signal.frequency > limit {
        return Err(ActuationError::FrequencyOutOfRange {
            f: signal.frequency,
            limit,
        });
    }
    let h = resonator.normalized_magnitude(signal.frequency);
    Ok(sat.angle(v_fund * h))
}

/// Angles at resonance for each drive level of `vpp_list`, using the shape
/// and duty of `template`.
pub fn voltage_response_curve(
    resonator: &ResonatorParams,
    sat: &SaturationModel,
    template: &DriveSignal,
    vpp_list: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if vpp_list.iter().any(|v| !(*v >= 0.0)) || vpp_list.windows(2).any(|w| w[1] < w[0]) {
        return Err(ActuationError::BadVoltageList);
    }
    let at_resonance = template.with_frequency(resonator.f0);
    vpp_list
        .iter()
        .map(|&vpp| {
            steady_state_optical_angle(resonator, &at_resonance.with_vpp(vpp), sat)
                .map(|angle| (vpp, angle))
        })
        .collect()
}

/// dθ/dV at `signal` divided by dθ/dV at 0 V, i.e. sech² of the tanh argument.
pub fn marginal_gain_ratio(
    resonator: &ResonatorParams,
    signal: &DriveSignal,
    sat: &SaturationModel,
) -> Result<f64> {
    let v_fund = fundamental_amplitude(signal)?;
    let h = resonator.normalized_magnitude(signal.frequency);
    let x = sat.small_signal_gain * v_fund * h / sat.sat_angle;
    Ok(1.0 / x.cosh().powi(2))
}

/// Lowest drive level (Vpp) at which the marginal gain drops below
/// `threshold` of the small-signal slope, for a drive at resonance.
pub fn saturation_onset_vpp(
    resonator: &ResonatorParams,
    sat: &SaturationModel,
    template: &DriveSignal,
    threshold: f64,
) -> f64 {
    // sech²(x) = threshold  =>  x = acosh(1/sqrt(threshold))
    let x = (1.0 / threshold.sqrt()).acosh();
    let per_vpp = fundamental_per_vpp(template.shape, template.duty)
        * resonator.normalized_magnitude(resonator.f0);
    x * sat.sat_angle / (sat.small_signal_gain * per_vpp)
}

/// Saturation model that passes through `target_deg` at `drive` with the
/// tanh argument equal to [`PLATEAU_TANH_ARGUMENT`].
///
/// Two conditions fix the two unknowns: `θ_sat·tanh(x) = target` and
/// `G·V_fund·|H_n|/θ_sat = x`.
pub fn calibrate_saturation(
    target_deg: f64,
    drive: &DriveSignal,
    resonator: &ResonatorParams,
) -> Result<SaturationModel> {
    let v_fund = fundamental_amplitude(drive)?;
    let h = resonator.normalized_magnitude(drive.frequency);
    let x = PLATEAU_TANH_ARGUMENT;
    let sat_angle = target_deg / x.tanh();
    SaturationModel::new(sat_angle, x * sat_angle / (v_fund * h))
}
