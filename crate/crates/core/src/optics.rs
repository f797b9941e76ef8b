//! Angle conventions, projection geometry and scanner figures of merit.
//!
//! **Convention:** an "optical scan angle" is always the full, peak-to-peak
//! optical angle. Reflection doubles the mechanical tilt and the scan spans
//! both extremes, so `θ_opt = 4·θ_mech` with `θ_mech` the mechanical
//! zero-to-peak amplitude.

use thiserror::Error;

use crate::device::Axis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("optical angle {0}° outside [0, 180)")]
    AngleOutOfRange(f64),
    #[error("invalid projection setup `{field}`: {reason}")]
    InvalidSetup { field: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, OpticsError>;

/// Screen and beam parameters of the projection bench.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionSetup {
    /// Scanner-to-screen distance (m).
    pub screen_distance: f64,
    /// Mirror aperture along the scan direction of the horizontal axis (m).
    pub aperture_horizontal: f64,
    /// Mirror aperture along the scan direction of the vertical axis (m).
    pub aperture_vertical: f64,
    /// m
    pub wavelength: f64,
    pub aperture_shape_factor: f64,
}

impl Default for ProjectionSetup {
    fn default() -> Self {
        Self {
            screen_distance: 0.60,
            aperture_horizontal: 1.0e-3,
            aperture_vertical: 1.4e-3,
            wavelength: 635e-9,
            aperture_shape_factor: 1.0,
        }
    }
}

impl ProjectionSetup {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("screen_distance", self.screen_distance),
            ("aperture_horizontal", self.aperture_horizontal),
            ("aperture_vertical", self.aperture_vertical),
            ("wavelength", self.wavelength),
            ("aperture_shape_factor", self.aperture_shape_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OpticsError::InvalidSetup {
                    field,
                    reason: format!("must be > 0, got {v}"),
                });
            }
        }
        Ok(())
    }

    pub fn aperture(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Horizontal => self.aperture_horizontal,
            Axis::Vertical => self.aperture_vertical,
        }
    }
}

/// Full optical scan angle from the mechanical half-amplitude (both deg).
pub fn optical_from_mechanical(theta_mech_half_amp: f64) -> f64 {
    debug_assert!(theta_mech_half_amp >= 0.0);
    4.0 * theta_mech_half_amp
}

/// Inverse of [`optical_from_mechanical`].
pub fn mechanical_from_optical(theta_opt_full: f64) -> f64 {
    theta_opt_full / 4.0
}

/// Width of the scan line on a screen at `distance`, `2L·tan(θ/2)` (m).
pub fn screen_width(theta_opt_full_deg: f64, distance: f64) -> Result<f64> {
    if !(0.0..180.0).contains(&theta_opt_full_deg) {
        return Err(OpticsError::AngleOutOfRange(theta_opt_full_deg));
    }
    Ok(2.0 * distance * (0.5 * theta_opt_full_deg).to_radians().tan())
}

/// Full optical angle (deg) subtended by a scan line of `width` at `distance`.
pub fn angle_from_width(width: f64, distance: f64) -> f64 {
    debug_assert!(width >= 0.0 && distance > 0.0);
    2.0 * (0.5 * width / distance).atan().to_degrees()
}

/// `θ_opt·D·f` in deg·mm·kHz.
pub fn bandwidth_efficiency_product(theta_opt_deg: f64, aperture_mm: f64, f_khz: f64) -> f64 {
    theta_opt_deg * aperture_mm * f_khz
}

/// Diffraction-limited spot count along one scan line,
/// `floor(θ[rad]·D / (a·λ))`.
pub fn resolvable_spots(theta_opt_deg: f64, setup: &ProjectionSetup, axis: Axis) -> Result<u64> {
    Ok(resolvable_spots_exact(theta_opt_deg, setup, axis)?.floor() as u64)
}

/// Spot count before flooring.
pub fn resolvable_spots_exact(theta_opt_deg: f64, setup: &ProjectionSetup, axis: Axis) -> Result<f64> {
    setup.validate()?;
    Ok(theta_opt_deg.to_radians() * setup.aperture(axis)
        / (setup.aperture_shape_factor * setup.wavelength))
}
