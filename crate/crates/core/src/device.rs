//! Device parameters, spec-file I/O and lumped mechanics.
//!
//! # Spec file
//!
//! Plain text, one `key = value` per line under `[geometry]`, `[material]`,
//! `[vertical]` or `[horizontal]`. `#` starts a comment. Every key carries
//! its unit as a suffix; unknown keys are rejected. Keys left out take the
//! defaults of [`DeviceSpec::default`], except the derived axis values
//! (`inertia_kg_m2`, `resonant_gain_deg_per_v`, `sat_angle_deg`), which are
//! recomputed from whatever geometry, `f0_hz` and `q` the file sets.
//!
//! The canonical emitter writes every key, in the order of [`GEOMETRY_KEYS`],
//! [`MATERIAL_KEYS`] and [`AXIS_KEYS`], with 9 significant digits.
//! `stiffness_n_m_per_rad` is accepted on input but never emitted; stiffness
//! is always derived as `inertia·(2π·f0)²`.
//!
//! # Lumped estimates
//!
//! The fast (horizontal) axis is modelled as the elliptical mirror plate on
//! the two inner torsional flexures, cut from the device layer. The slow axis
//! uses a solid-plate bound on the outer frame; its torsion-beam length is not
//! dimensioned, so no lumped frequency is produced for it. Rim mass under the
//! mirror is excluded, so inertia is underestimated. None of these numbers
//! predict the finite-element modes; they are reported as ratios to the
//! stored targets.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::actuation::{self, DriveSignal, SaturationModel, PLATEAU_VPP};
use crate::numfmt::fmt_sig;
use crate::resonator::ResonatorParams;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("invalid `{field}`: {reason}")]
    Invariant { field: String, reason: String },
}

pub type Result<T> = std::result::Result<T, SpecError>;

fn invariant(field: impl Into<String>, reason: impl Into<String>) -> SpecError {
    SpecError::Invariant {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Vertical,
    Horizontal,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::Vertical, Axis::Horizontal];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Vertical => "vertical",
            Axis::Horizontal => "horizontal",
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "vertical" => Ok(Axis::Vertical),
            "horizontal" => Ok(Axis::Horizontal),
            other => Err(format!("unknown axis `{other}` (vertical|horizontal)")),
        }
    }
}

/// Scanner geometry, SI lengths (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceGeometry {
    /// Mirror semi-axis along the fast-mode rotation axis.
    pub mirror_semi_axis_a: f64,
    pub mirror_semi_axis_b: f64,
    /// Total released thickness (device + handle layer).
    pub device_thickness: f64,
    /// Device-layer thickness, which is what the flexures are cut from.
    pub device_layer_thickness: f64,
    pub rim_thickness: f64,
    pub over_etch: f64,
    pub outer_frame_w: f64,
    pub outer_frame_h: f64,
    pub outer_torsion_beam_width: f64,
    pub mid_flexure_len: f64,
    pub mid_flexure_width: f64,
    pub inner_flexure_len: f64,
    pub inner_flexure_width: f64,
    pub die_w: f64,
    pub die_h: f64,
}

impl Default for DeviceGeometry {
    fn default() -> Self {
        Self {
            mirror_semi_axis_a: 0.7e-3,
            mirror_semi_axis_b: 0.5e-3,
            device_thickness: 130e-6,
            device_layer_thickness: 50e-6,
            rim_thickness: 175e-6,
            over_etch: 14e-6,
            outer_frame_w: 4e-3,
            outer_frame_h: 7.5e-3,
            outer_torsion_beam_width: 130e-6,
            mid_flexure_len: 220e-6,
            mid_flexure_width: 520e-6,
            inner_flexure_len: 480e-6,
            inner_flexure_width: 270e-6,
            die_w: 10e-3,
            die_h: 10e-3,
        }
    }
}

impl DeviceGeometry {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mirror_semi_axis_a", self.mirror_semi_axis_a),
            ("mirror_semi_axis_b", self.mirror_semi_axis_b),
            ("device_thickness", self.device_thickness),
            ("device_layer_thickness", self.device_layer_thickness),
            ("rim_thickness", self.rim_thickness),
            ("over_etch", self.over_etch),
            ("outer_frame_w", self.outer_frame_w),
            ("outer_frame_h", self.outer_frame_h),
            ("outer_torsion_beam_width", self.outer_torsion_beam_width),
            ("mid_flexure_len", self.mid_flexure_len),
            ("mid_flexure_width", self.mid_flexure_width),
            ("inner_flexure_len", self.inner_flexure_len),
            ("inner_flexure_width", self.inner_flexure_width),
            ("die_w", self.die_w),
            ("die_h", self.die_h),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invariant(name, format!("must be > 0, got {v} m")));
            }
        }
        let mirror_span = 2.0 * self.mirror_semi_axis_a.max(self.mirror_semi_axis_b);
        if mirror_span > self.outer_frame_w.min(self.outer_frame_h) {
            return Err(invariant(
                "mirror_semi_axis_a",
                "mirror does not fit inside the outer frame",
            ));
        }
        let frame_fits = (self.outer_frame_w <= self.die_w && self.outer_frame_h <= self.die_h)
            || (self.outer_frame_w <= self.die_h && self.outer_frame_h <= self.die_w);
        if !frame_fits {
            return Err(invariant("outer_frame_w", "outer frame does not fit inside the die"));
        }
        if !(self.device_thickness < self.rim_thickness) {
            return Err(invariant(
                "device_thickness",
                "must be smaller than rim_thickness",
            ));
        }
        if self.device_layer_thickness > self.device_thickness {
            return Err(invariant(
                "device_layer_thickness",
                "must not exceed device_thickness",
            ));
        }
        if self.over_etch >= self.device_layer_thickness {
            return Err(invariant(
                "over_etch",
                "must be smaller than device_layer_thickness",
            ));
        }
        Ok(())
    }

    /// Flexure thickness used by the stiffness estimates.
    pub fn flexure_thickness(&self, apply_over_etch: bool) -> f64 {
        if apply_over_etch {
            self.device_layer_thickness - self.over_etch
        } else {
            self.device_layer_thickness
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialProps {
    /// kg/m³
    pub density: f64,
    /// Pa
    pub shear_modulus: f64,
    /// Pa, (low, high)
    pub fracture_strength_range: (f64, f64),
}

impl Default for MaterialProps {
    fn default() -> Self {
        Self {
            density: 2329.0,
            shear_modulus: 5.0e10,
            fracture_strength_range: (1.0e9, 2.0e9),
        }
    }
}

impl MaterialProps {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(invariant("density", "must be > 0"));
        }
        if !(self.shear_modulus > 0.0 && self.shear_modulus.is_finite()) {
            return Err(invariant("shear_modulus", "must be > 0"));
        }
        let (lo, hi) = self.fracture_strength_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(invariant(
                "fracture_strength",
                format!("need 0 < low < high, got {lo}..{hi}"),
            ));
        }
        Ok(())
    }
}

/// Lumped resonator of one scan axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisMode {
    pub axis: Axis,
    /// Hz
    pub f0: f64,
    pub q_factor: f64,
    /// kg·m²
    pub inertia: f64,
    /// N·m/rad, always `inertia·(2π·f0)²`.
    pub stiffness: f64,
    /// Optical deg per volt of drive fundamental.
    pub resonant_gain: f64,
    /// Optical deg, saturation asymptote.
    pub sat_angle: f64,
}

impl AxisMode {
    pub fn new(
        axis: Axis,
        f0: f64,
        q_factor: f64,
        inertia: f64,
        resonant_gain: f64,
        sat_angle: f64,
    ) -> Result<Self> {
        let mode = Self {
            axis,
            f0,
            q_factor,
            inertia,
            stiffness: required_stiffness(inertia, f0),
            resonant_gain,
            sat_angle,
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("{}.{f}", self.axis);
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            return Err(invariant(field("f0"), format!("must be > 0, got {}", self.f0)));
        }
        if !(self.q_factor > 0.5 && self.q_factor.is_finite()) {
            return Err(invariant(
                field("q"),
                format!("must be > 0.5, got {}", self.q_factor),
            ));
        }
        if !(self.inertia > 0.0 && self.inertia.is_finite()) {
            return Err(invariant(field("inertia"), "must be > 0"));
        }
        let expected = required_stiffness(self.inertia, self.f0);
        if ((self.stiffness - expected) / expected).abs() > 1e-9 {
            return Err(invariant(
                field("stiffness"),
                format!("{} disagrees with inertia·(2π·f0)² = {expected}", self.stiffness),
            ));
        }
        if !(self.resonant_gain >= 0.0 && self.resonant_gain.is_finite()) {
            return Err(invariant(field("resonant_gain"), "must be >= 0"));
        }
        if !(self.sat_angle > 0.0 && self.sat_angle.is_finite()) {
            return Err(invariant(field("sat_angle"), "must be > 0"));
        }
        Ok(())
    }

    /// Unit-gain resonator at this axis' frequency and Q.
    pub fn resonator(&self) -> ResonatorParams {
        ResonatorParams {
            f0: self.f0,
            q_factor: self.q_factor,
            static_gain: 1.0,
        }
    }

    /// `None` when the axis has zero gain (it never moves).
    pub fn saturation(&self) -> Option<SaturationModel> {
        SaturationModel::new(self.sat_angle, self.resonant_gain).ok()
    }

    /// Full optical scan angle for a 50% square drive of `vpp` at f0.
    pub fn scan_angle(&self, vpp: f64) -> actuation::Result<f64> {
        match self.saturation() {
            Some(sat) => actuation::steady_state_optical_angle(
                &self.resonator(),
                &DriveSignal::square(vpp, self.f0),
                &sat,
            ),
            None => Ok(0.0),
        }
    }

    fn set_f0(&mut self, f0: f64) {
        self.f0 = f0;
        self.stiffness = required_stiffness(self.inertia, f0);
    }
}

/// Complete scanner description.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub geometry: DeviceGeometry,
    pub material: MaterialProps,
    pub vertical: AxisMode,
    pub horizontal: AxisMode,
    /// Finite-element mode targets (vertical, horizontal), Hz.
    pub fea_targets: (f64, f64),
    /// Q measured with the die taped to a piezo disc (vertical, horizontal).
    pub measured_qs_mounted: (f64, f64),
}

/// Measured full optical scan angles at the plateau drive (vertical, horizontal).
pub const PLATEAU_SCAN_ANGLES_DEG: (f64, f64) = (4.8, 11.5);

impl Default for DeviceSpec {
    fn default() -> Self {
        let geometry = DeviceGeometry::default();
        let material = MaterialProps::default();
        let vertical = default_axis(Axis::Vertical, &geometry, &material, 3600.0, 750.0);
        let horizontal = default_axis(Axis::Horizontal, &geometry, &material, 54175.0, 1050.0);
        Self {
            geometry,
            material,
            vertical,
            horizontal,
            fea_targets: (3718.0, 54504.0),
            measured_qs_mounted: (300.56, 642.76),
        }
    }
}

fn default_axis(
    axis: Axis,
    geometry: &DeviceGeometry,
    material: &MaterialProps,
    f0: f64,
    q_factor: f64,
) -> AxisMode {
    let inertia = default_inertia(axis, geometry, material.density);
    let (gain, sat) = default_saturation(axis, f0, q_factor);
    AxisMode {
        axis,
        f0,
        q_factor,
        inertia,
        stiffness: required_stiffness(inertia, f0),
        resonant_gain: gain,
        sat_angle: sat,
    }
}

/// Geometry-derived inertia used when a spec does not set one.
pub fn default_inertia(axis: Axis, geometry: &DeviceGeometry, density: f64) -> f64 {
    match axis {
        Axis::Horizontal => elliptical_plate_inertia(geometry, PlateAxis::Major, density),
        // Solid plate of the outer-frame footprint tilting about its long side.
        Axis::Vertical => rectangular_plate_inertia(
            geometry.outer_frame_w,
            geometry.outer_frame_h,
            geometry.device_thickness,
            density,
        ),
    }
}

/// (resonant_gain, sat_angle) putting the plateau drive on the measured angle.
pub fn default_saturation(axis: Axis, f0: f64, q_factor: f64) -> (f64, f64) {
    let target = match axis {
        Axis::Vertical => PLATEAU_SCAN_ANGLES_DEG.0,
        Axis::Horizontal => PLATEAU_SCAN_ANGLES_DEG.1,
    };
    let resonator = ResonatorParams {
        f0,
        q_factor,
        static_gain: 1.0,
    };
    let sat = actuation::calibrate_saturation(
        target,
        &DriveSignal::square(PLATEAU_VPP, f0),
        &resonator,
    )
    .expect("plateau calibration of a valid axis");
    (sat.small_signal_gain, sat.sat_angle)
}

impl DeviceSpec {
    pub fn axis(&self, axis: Axis) -> &AxisMode {
        match axis {
            Axis::Vertical => &self.vertical,
            Axis::Horizontal => &self.horizontal,
        }
    }

    pub fn axis_mut(&mut self, axis: Axis) -> &mut AxisMode {
        match axis {
            Axis::Vertical => &mut self.vertical,
            Axis::Horizontal => &mut self.horizontal,
        }
    }

    pub fn fea_target(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Vertical => self.fea_targets.0,
            Axis::Horizontal => self.fea_targets.1,
        }
    }

    pub fn mounted_q(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Vertical => self.measured_qs_mounted.0,
            Axis::Horizontal => self.measured_qs_mounted.1,
        }
    }

    pub fn set_mounted_q(&mut self, axis: Axis, q: f64) {
        match axis {
            Axis::Vertical => self.measured_qs_mounted.0 = q,
            Axis::Horizontal => self.measured_qs_mounted.1 = q,
        }
    }

    /// Resonator of the optical-setup regime (the Q stored in the axis mode).
    pub fn resonator(&self, axis: Axis) -> ResonatorParams {
        self.axis(axis).resonator()
    }

    /// Resonator of the taped-mount regime.
    pub fn mounted_resonator(&self, axis: Axis) -> ResonatorParams {
        ResonatorParams {
            q_factor: self.mounted_q(axis),
            ..self.resonator(axis)
        }
    }

    /// Sets an axis frequency, keeping inertia and rederiving stiffness.
    pub fn set_f0(&mut self, axis: Axis, f0: f64) {
        self.axis_mut(axis).set_f0(f0);
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.material.validate()?;
        self.vertical.validate()?;
        self.horizontal.validate()?;
        if self.vertical.axis != Axis::Vertical || self.horizontal.axis != Axis::Horizontal {
            return Err(invariant("axis", "axis labels swapped"));
        }
        if !(self.vertical.f0 < self.horizontal.f0) {
            return Err(invariant(
                "vertical.f0",
                "must be below horizontal.f0",
            ));
        }
        for (name, v) in [
            ("vertical.fea_target", self.fea_targets.0),
            ("horizontal.fea_target", self.fea_targets.1),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invariant(name, "must be > 0"));
            }
        }
        for (name, v) in [
            ("vertical.q_mounted", self.measured_qs_mounted.0),
            ("horizontal.q_mounted", self.measured_qs_mounted.1),
        ] {
            if !(v > 0.5 && v.is_finite()) {
                return Err(invariant(name, "must be > 0.5"));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SpecError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_spec(text)
    }

    /// Canonical text encoding; see the module docs for the layout.
    pub fn to_canonical_text(&self) -> String {
        emit_spec(self)
    }
}

// ---------------------------------------------------------------------------
// spec file

#[derive(Clone, Copy)]
enum Unit {
    Micron,
    Millimetre,
}

impl Unit {
    fn to_si(self, v: f64) -> f64 {
        match self {
            Unit::Micron => v / 1e6,
            Unit::Millimetre => v / 1e3,
        }
    }

    fn in_unit(self, v: f64) -> f64 {
        match self {
            Unit::Micron => v * 1e6,
            Unit::Millimetre => v * 1e3,
        }
    }
}

/// Keys of `[geometry]` in canonical order.
pub const GEOMETRY_KEYS: [&str; 15] = [
    "mirror_semi_axis_a_um",
    "mirror_semi_axis_b_um",
    "device_thickness_um",
    "device_layer_thickness_um",
    "rim_thickness_um",
    "over_etch_um",
    "outer_frame_w_mm",
    "outer_frame_h_mm",
    "outer_torsion_beam_width_um",
    "mid_flexure_len_um",
    "mid_flexure_width_um",
    "inner_flexure_len_um",
    "inner_flexure_width_um",
    "die_w_mm",
    "die_h_mm",
];

/// Keys of `[material]` in canonical order.
pub const MATERIAL_KEYS: [&str; 4] = [
    "density_kg_m3",
    "shear_modulus_pa",
    "fracture_strength_low_pa",
    "fracture_strength_high_pa",
];

/// Keys of `[vertical]` and `[horizontal]` in canonical order.
pub const AXIS_KEYS: [&str; 7] = [
    "f0_hz",
    "q",
    "q_mounted",
    "fea_target_hz",
    "inertia_kg_m2",
    "resonant_gain_deg_per_v",
    "sat_angle_deg",
];

const STIFFNESS_KEY: &str = "stiffness_n_m_per_rad";

impl DeviceGeometry {
    /// `(key, value)` pairs in spec-file units, in canonical key order.
    pub fn keyed_values(&self) -> Vec<(&'static str, f64)> {
        let mut g = *self;
        GEOMETRY_KEYS
            .iter()
            .map(|&key| {
                let (v, unit) = geometry_field(&mut g, key).expect("canonical key");
                (key, unit.in_unit(*v))
            })
            .collect()
    }
}

fn geometry_field<'a>(g: &'a mut DeviceGeometry, key: &str) -> Option<(&'a mut f64, Unit)> {
    use Unit::*;
    Some(match key {
        "mirror_semi_axis_a_um" => (&mut g.mirror_semi_axis_a, Micron),
        "mirror_semi_axis_b_um" => (&mut g.mirror_semi_axis_b, Micron),
        "device_thickness_um" => (&mut g.device_thickness, Micron),
        "device_layer_thickness_um" => (&mut g.device_layer_thickness, Micron),
        "rim_thickness_um" => (&mut g.rim_thickness, Micron),
        "over_etch_um" => (&mut g.over_etch, Micron),
        "outer_frame_w_mm" => (&mut g.outer_frame_w, Millimetre),
        "outer_frame_h_mm" => (&mut g.outer_frame_h, Millimetre),
        "outer_torsion_beam_width_um" => (&mut g.outer_torsion_beam_width, Micron),
        "mid_flexure_len_um" => (&mut g.mid_flexure_len, Micron),
        "mid_flexure_width_um" => (&mut g.mid_flexure_width, Micron),
        "inner_flexure_len_um" => (&mut g.inner_flexure_len, Micron),
        "inner_flexure_width_um" => (&mut g.inner_flexure_width, Micron),
        "die_w_mm" => (&mut g.die_w, Millimetre),
        "die_h_mm" => (&mut g.die_h, Millimetre),
        _ => return None,
    })
}

fn material_field<'a>(m: &'a mut MaterialProps, key: &str) -> Option<&'a mut f64> {
    Some(match key {
        "density_kg_m3" => &mut m.density,
        "shear_modulus_pa" => &mut m.shear_modulus,
        "fracture_strength_low_pa" => &mut m.fracture_strength_range.0,
        "fracture_strength_high_pa" => &mut m.fracture_strength_range.1,
        _ => return None,
    })
}

#[derive(Default)]
struct AxisOverrides {
    f0: Option<f64>,
    q: Option<f64>,
    q_mounted: Option<f64>,
    fea_target: Option<f64>,
    inertia: Option<f64>,
    stiffness: Option<f64>,
    resonant_gain: Option<f64>,
    sat_angle: Option<f64>,
}

impl AxisOverrides {
    fn slot(&mut self, key: &str) -> Option<&mut Option<f64>> {
        Some(match key {
            "f0_hz" => &mut self.f0,
            "q" => &mut self.q,
            "q_mounted" => &mut self.q_mounted,
            "fea_target_hz" => &mut self.fea_target,
            "inertia_kg_m2" => &mut self.inertia,
            STIFFNESS_KEY => &mut self.stiffness,
            "resonant_gain_deg_per_v" => &mut self.resonant_gain,
            "sat_angle_deg" => &mut self.sat_angle,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Geometry,
    Material,
    Axis(Axis),
}

impl Section {
    fn name(self) -> &'static str {
        match self {
            Section::Geometry => "geometry",
            Section::Material => "material",
            Section::Axis(a) => a.name(),
        }
    }
}

fn parse_spec(text: &str) -> Result<DeviceSpec> {
    let defaults = DeviceSpec::default();
    let mut geometry = defaults.geometry;
    let mut material = defaults.material;
    let mut overrides = [AxisOverrides::default(), AxisOverrides::default()];
    let mut section: Option<Section> = None;
    let mut seen: Vec<(&'static str, String)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(inner) = body.strip_prefix('[') {
            let name = inner
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line, "unterminated section header"))?
                .trim();
            section = Some(match name {
                "geometry" => Section::Geometry,
                "material" => Section::Material,
                "vertical" => Section::Axis(Axis::Vertical),
                "horizontal" => Section::Axis(Axis::Horizontal),
                other => return Err(parse_err(line, format!("unknown section [{other}]"))),
            });
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| parse_err(line, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        let sect = section.ok_or_else(|| parse_err(line, format!("key `{key}` before any section")))?;
        if key.ends_with("_ghz") {
            return Err(parse_err(
                line,
                format!("`{key}`: the _ghz suffix is not accepted, use _hz"),
            ));
        }
        let v: f64 = value
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(line, format!("`{key}`: `{value}` is not a finite number")))?;
        if seen.iter().any(|(s, k)| *s == sect.name() && k == key) {
            return Err(parse_err(line, format!("duplicate key `{key}`")));
        }
        seen.push((sect.name(), key.to_string()));

        let unknown = || SpecError::UnknownKey {
            line,
            section: sect.name().to_string(),
            key: key.to_string(),
        };
        match sect {
            Section::Geometry => {
                let (slot, unit) = geometry_field(&mut geometry, key).ok_or_else(unknown)?;
                *slot = unit.to_si(v);
            }
            Section::Material => {
                *material_field(&mut material, key).ok_or_else(unknown)? = v;
            }
            Section::Axis(axis) => {
                let o = &mut overrides[axis as usize];
                *o.slot(key).ok_or_else(unknown)? = Some(v);
            }
        }
    }

    geometry.validate()?;
    material.validate()?;
    let [vo, ho] = overrides;
    let vertical = build_axis(Axis::Vertical, &vo, &defaults.vertical, &geometry, &material)?;
    let horizontal = build_axis(Axis::Horizontal, &ho, &defaults.horizontal, &geometry, &material)?;
    let spec = DeviceSpec {
        geometry,
        material,
        vertical,
        horizontal,
        fea_targets: (
            vo.fea_target.unwrap_or(defaults.fea_targets.0),
            ho.fea_target.unwrap_or(defaults.fea_targets.1),
        ),
        measured_qs_mounted: (
            vo.q_mounted.unwrap_or(defaults.measured_qs_mounted.0),
            ho.q_mounted.unwrap_or(defaults.measured_qs_mounted.1),
        ),
    };
    spec.validate()?;
    Ok(spec)
}

fn build_axis(
    axis: Axis,
    o: &AxisOverrides,
    default: &AxisMode,
    geometry: &DeviceGeometry,
    material: &MaterialProps,
) -> Result<AxisMode> {
    let field = |f: &str| format!("{axis}.{f}");
    let f0 = o.f0.unwrap_or(default.f0);
    let q = o.q.unwrap_or(default.q_factor);
    if !(f0 > 0.0) {
        return Err(invariant(field("f0"), format!("must be > 0, got {f0}")));
    }
    if !(q > 0.5) {
        return Err(invariant(field("q"), format!("must be > 0.5, got {q}")));
    }
    let w_sq = (TAU * f0).powi(2);
    let inertia = match (o.inertia, o.stiffness) {
        (Some(j), Some(k)) => {
            let expected = j * w_sq;
            if ((k - expected) / expected).abs() > 1e-9 {
                return Err(invariant(
                    field("stiffness"),
                    format!("{k} disagrees with inertia·(2π·f0)² = {expected}"),
                ));
            }
            j
        }
        (Some(j), None) => j,
        (None, Some(k)) => k / w_sq,
        (None, None) => default_inertia(axis, geometry, material.density),
    };
    let (gain, sat) = match (o.resonant_gain, o.sat_angle) {
        (Some(g), Some(s)) => (g, s),
        (g, s) => {
            let (dg, ds) = default_saturation(axis, f0, q);
            (g.unwrap_or(dg), s.unwrap_or(ds))
        }
    };
    AxisMode::new(axis, f0, q, inertia, gain, sat)
}

fn parse_err(line: usize, message: impl Into<String>) -> SpecError {
    SpecError::Parse {
        line,
        message: message.into(),
    }
}

fn emit_spec(spec: &DeviceSpec) -> String {
    let mut out = String::new();
    out.push_str("# mirrorscan device spec\n\n[geometry]\n");
    let mut g = spec.geometry;
    for key in GEOMETRY_KEYS {
        let (v, unit) = geometry_field(&mut g, key).expect("canonical geometry key");
        push_kv(&mut out, key, unit.in_unit(*v));
    }
    out.push_str("\n[material]\n");
    let mut m = spec.material;
    for key in MATERIAL_KEYS {
        push_kv(&mut out, key, *material_field(&mut m, key).expect("canonical material key"));
    }
    for axis in Axis::BOTH {
        let mode = spec.axis(axis);
        let _ = write!(out, "\n[{axis}]\n");
        for key in AXIS_KEYS {
            let v = match key {
                "f0_hz" => mode.f0,
                "q" => mode.q_factor,
                "q_mounted" => spec.mounted_q(axis),
                "fea_target_hz" => spec.fea_target(axis),
                "inertia_kg_m2" => mode.inertia,
                "resonant_gain_deg_per_v" => mode.resonant_gain,
                "sat_angle_deg" => mode.sat_angle,
                _ => unreachable!("axis key {key}"),
            };
            push_kv(&mut out, key, v);
        }
    }
    out
}

fn push_kv(out: &mut String, key: &str, v: f64) {
    let _ = writeln!(out, "{key} = {}", fmt_sig(v, 9));
}

// ---------------------------------------------------------------------------
// lumped mechanics

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateAxis {
    /// Rotation about the long semi-axis `a`.
    Major,
    /// Rotation about the short semi-axis `b`.
    Minor,
}

/// Inertia of the bare elliptical mirror plate (no rim).
pub fn elliptical_plate_inertia(geometry: &DeviceGeometry, about: PlateAxis, density: f64) -> f64 {
    let (a, b) = (geometry.mirror_semi_axis_a, geometry.mirror_semi_axis_b);
    let (along, across) = match about {
        PlateAxis::Major => (a, b),
        PlateAxis::Minor => (b, a),
    };
    ellipse_inertia(along, across, geometry.device_thickness, density)
}

/// Elliptical plate with semi-axis `along` on the rotation axis and `across`
/// perpendicular to it: `J = m·(across²/4 + t²/12)`, `m = ρ·π·a·b·t`.
pub fn ellipse_inertia(along: f64, across: f64, thickness: f64, density: f64) -> f64 {
    assert!(along > 0.0 && across > 0.0 && thickness > 0.0 && density > 0.0);
    let mass = density * std::f64::consts::PI * along * across * thickness;
    mass * (across * across / 4.0 + thickness * thickness / 12.0)
}

/// Solid rectangular plate of `width` (perpendicular to the rotation axis),
/// `length` (along it) and `thickness`: `J = m·(w² + t²)/12`.
pub fn rectangular_plate_inertia(width: f64, length: f64, thickness: f64, density: f64) -> f64 {
    assert!(width > 0.0 && length > 0.0 && thickness > 0.0 && density > 0.0);
    let mass = density * width * length * thickness;
    mass * (width * width + thickness * thickness) / 12.0
}

/// Torsion constant of a rectangular section (m⁴).
///
/// With `a`, `b` the half-lengths of the long and short sides,
/// `K = a·b³·(16/3 − 3.36·(b/a)·(1 − b⁴/(12a⁴)))`. The two sides may be given
/// in either order.
pub fn rectangular_torsion_constant(side1: f64, side2: f64) -> f64 {
    assert!(side1 > 0.0 && side2 > 0.0);
    let a = 0.5 * side1.max(side2);
    let b = 0.5 * side1.min(side2);
    let ratio = b / a;
    a * b.powi(3) * (16.0 / 3.0 - 3.36 * ratio * (1.0 - ratio.powi(4) / 12.0))
}

/// Torsional stiffness of `n_parallel` identical rectangular beams,
/// `k = n·G·K/L` (N·m/rad).
pub fn torsion_beam_stiffness(
    beam_width: f64,
    beam_thickness: f64,
    beam_length: f64,
    shear_modulus: f64,
    n_parallel: u32,
) -> f64 {
    assert!(beam_length > 0.0 && shear_modulus > 0.0 && n_parallel >= 1);
    n_parallel as f64 * shear_modulus * rectangular_torsion_constant(beam_width, beam_thickness)
        / beam_length
}

/// `f = √(k/J) / 2π`.
pub fn natural_frequency(stiffness: f64, inertia: f64) -> f64 {
    assert!(stiffness > 0.0 && inertia > 0.0);
    (stiffness / inertia).sqrt() / TAU
}

/// `k = J·(2π·f0)²`.
pub fn required_stiffness(inertia: f64, f0: f64) -> f64 {
    let w = TAU * f0;
    inertia * w * w
}

/// Geometry-derived numbers for one axis, set against the stored targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LumpedEstimate {
    pub axis: Axis,
    pub inertia: f64,
    /// Stiffness that puts the measured f0 on this inertia.
    pub required_stiffness: f64,
    /// Flexure stiffness from geometry, when the flexures are dimensioned.
    pub flexure_stiffness: Option<f64>,
    pub lumped_f0: Option<f64>,
    pub fea_target: f64,
    pub measured_f0: f64,
}

impl LumpedEstimate {
    pub fn lumped_to_fea(&self) -> Option<f64> {
        self.lumped_f0.map(|f| f / self.fea_target)
    }

    pub fn measured_to_fea(&self) -> f64 {
        self.measured_f0 / self.fea_target
    }
}

pub fn lumped_estimate(spec: &DeviceSpec, axis: Axis, apply_over_etch: bool) -> LumpedEstimate {
    let g = &spec.geometry;
    let inertia = default_inertia(axis, g, spec.material.density);
    let flexure_stiffness = match axis {
        Axis::Horizontal => Some(torsion_beam_stiffness(
            g.inner_flexure_width,
            g.flexure_thickness(apply_over_etch),
            g.inner_flexure_len,
            spec.material.shear_modulus,
            2,
        )),
        Axis::Vertical => None,
    };
    let measured_f0 = spec.axis(axis).f0;
    LumpedEstimate {
        axis,
        inertia,
        required_stiffness: required_stiffness(inertia, measured_f0),
        flexure_stiffness,
        lumped_f0: flexure_stiffness.map(|k| natural_frequency(k, inertia)),
        fea_target: spec.fea_target(axis),
        measured_f0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mirror_inertia_hand_value() {
        let g = DeviceGeometry::default();
        // m = ρπabt, J = m(b²/4 + t²/12)
        let m = 2329.0 * std::f64::consts::PI * 0.7e-3 * 0.5e-3 * 130e-6;
        assert!((m - 3.329e-7).abs() < 1e-10);
        let j = elliptical_plate_inertia(&g, PlateAxis::Major, 2329.0);
        assert_relative_eq!(j, m * (0.25e-6 / 4.0 + (130e-6_f64).powi(2) / 12.0), max_relative = 1e-12);
        assert!((j - 2.128e-14).abs() < 0.001e-14);
    }

    #[test]
    fn inertia_thin_limit_and_symmetry() {
        let m_of = |t: f64| 1000.0 * std::f64::consts::PI * 2.0 * 1.0 * t;
        let t = 1e-9;
        let j = ellipse_inertia(2.0, 1.0, t, 1000.0);
        assert_relative_eq!(j, m_of(t) * 0.25, max_relative = 1e-12);

        let mut g = DeviceGeometry::default();
        let j1 = elliptical_plate_inertia(&g, PlateAxis::Major, 2329.0);
        std::mem::swap(&mut g.mirror_semi_axis_a, &mut g.mirror_semi_axis_b);
        let j2 = elliptical_plate_inertia(&g, PlateAxis::Minor, 2329.0);
        assert_relative_eq!(j1, j2, max_relative = 1e-15);
    }

    #[test]
    fn torsion_closed_form_hand_value() {
        // a = 0.5 mm, b = 0.05 mm: K = a b³ (16/3 − 3.36·0.1·(1 − 1e-4/12))
        let k = torsion_beam_stiffness(1e-3, 1e-4, 1e-3, 50e9, 1);
        let hand = 50e9 * 0.5e-3 * 0.05e-3_f64.powi(3)
            * (16.0 / 3.0 - 3.36 * 0.1 * (1.0 - 1e-4 / 12.0))
            / 1e-3;
        assert_relative_eq!(k, hand, max_relative = 1e-12);
        assert!((k - 1.5617e-2).abs() < 1e-6);
        // side order does not matter
        assert_eq!(k, torsion_beam_stiffness(1e-4, 1e-3, 1e-3, 50e9, 1));
    }

    #[test]
    fn torsion_strip_limit() {
        let strip = |w: f64, t: f64| 50e9 * w * t.powi(3) / (3.0 * 1e-3);
        for ratio in [50.0, 100.0, 1000.0] {
            let t = 1e-5;
            let w = ratio * t;
            let k = torsion_beam_stiffness(w, t, 1e-3, 50e9, 1);
            assert!((k / strip(w, t) - 1.0).abs() < 0.02, "w/t = {ratio}");
        }
    }

    #[test]
    fn torsion_parallel_and_scaling() {
        let k1 = torsion_beam_stiffness(270e-6, 50e-6, 480e-6, 50e9, 1);
        assert_relative_eq!(torsion_beam_stiffness(270e-6, 50e-6, 480e-6, 50e9, 2), 2.0 * k1);
        let s = 1.7;
        let ks = torsion_beam_stiffness(270e-6 * s, 50e-6 * s, 480e-6 * s, 50e9, 1);
        assert_relative_eq!(ks, k1 * s.powi(3), max_relative = 1e-12);
    }

    #[test]
    fn frequency_examples() {
        assert_relative_eq!(natural_frequency(1.0, 1.0), 0.15915494309189535, max_relative = 1e-15);
        let j = 2.128e-14;
        let k = j * (TAU * 54175.0).powi(2);
        assert!((natural_frequency(k, j) - 54175.0).abs() < 1.0);
        assert_relative_eq!(natural_frequency(3.0 * k, 3.0 * j), natural_frequency(k, j), max_relative = 1e-15);

        assert!((required_stiffness(j, 54175.0) - 2.465e-3).abs() < 0.001e-3);
        assert_relative_eq!(required_stiffness(1.0, 1.0 / TAU), 1.0, max_relative = 1e-15);
        assert!((required_stiffness(j, 3600.0) - 1.089e-5).abs() < 0.001e-5);
    }

    #[test]
    fn defaults_match_device() {
        let s = DeviceSpec::default();
        s.validate().unwrap();
        assert_eq!(s.geometry.mirror_semi_axis_a * 2.0, 1.4e-3);
        assert_eq!(s.geometry.mirror_semi_axis_b * 2.0, 1.0e-3);
        assert_eq!(s.geometry.device_thickness, 130e-6);
        assert_eq!(s.geometry.rim_thickness, 175e-6);
        assert_eq!(s.geometry.over_etch, 14e-6);
        assert_eq!((s.geometry.outer_frame_w, s.geometry.outer_frame_h), (4e-3, 7.5e-3));
        assert_eq!(s.geometry.outer_torsion_beam_width, 130e-6);
        assert_eq!((s.geometry.mid_flexure_len, s.geometry.mid_flexure_width), (220e-6, 520e-6));
        assert_eq!((s.geometry.inner_flexure_len, s.geometry.inner_flexure_width), (480e-6, 270e-6));
        assert_eq!(s.material.density, 2329.0);
        assert_eq!(s.material.shear_modulus, 5.0e10);
        assert_eq!(s.material.fracture_strength_range, (1e9, 2e9));
        assert_eq!((s.vertical.f0, s.vertical.q_factor), (3600.0, 750.0));
        assert_eq!((s.horizontal.f0, s.horizontal.q_factor), (54175.0, 1050.0));
        assert_eq!(s.fea_targets, (3718.0, 54504.0));
        assert_eq!(s.measured_qs_mounted, (300.56, 642.76));
        assert_relative_eq!(s.horizontal.scan_angle(12.0).unwrap(), 11.5, max_relative = 1e-12);
        assert_relative_eq!(s.vertical.scan_angle(12.0).unwrap(), 4.8, max_relative = 1e-12);
    }

    #[test]
    fn fast_axis_lumped_ratio() {
        let s = DeviceSpec::default();
        let est = lumped_estimate(&s, Axis::Horizontal, false);
        let ratio = est.lumped_to_fea().unwrap();
        assert!(ratio > 1.0 / 3.0 && ratio < 3.0, "{ratio}");
        assert!(lumped_estimate(&s, Axis::Vertical, false).lumped_f0.is_none());
        let thinner = lumped_estimate(&s, Axis::Horizontal, true);
        assert!(thinner.flexure_stiffness.unwrap() < est.flexure_stiffness.unwrap());
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(DeviceSpec::parse("").unwrap(), DeviceSpec::default());
        assert_eq!(
            DeviceSpec::parse("# nothing here\n\n   \n").unwrap(),
            DeviceSpec::default()
        );
    }

    #[test]
    fn partial_axis_section() {
        let s = DeviceSpec::parse("[horizontal]\nf0_hz = 54175\nq = 1050\n").unwrap();
        assert_eq!(s, DeviceSpec::default());
        let s = DeviceSpec::parse("[horizontal]\nf0_hz = 54000 # shifted\n").unwrap();
        assert_eq!(s.horizontal.f0, 54000.0);
        assert_eq!(s.vertical, DeviceSpec::default().vertical);
        assert_relative_eq!(s.horizontal.scan_angle(12.0).unwrap(), 11.5, max_relative = 1e-12);
    }

    #[test]
    fn parse_errors() {
        let err = DeviceSpec::parse("[geometry]\ndevice_thickness_um = -5\n").unwrap_err();
        assert!(
            matches!(&err, SpecError::Invariant { field, .. } if field == "device_thickness"),
            "{err}"
        );
        let err = DeviceSpec::parse("[geometry]\nbogus_um = 1\n").unwrap_err();
        assert!(matches!(err, SpecError::UnknownKey { line: 2, .. }));
        let err = DeviceSpec::parse("[vertical]\nf0_ghz = 1\n").unwrap_err();
        assert!(matches!(err, SpecError::Parse { line: 2, .. }));
        let err = DeviceSpec::parse("\n\n[vertical]\nq = abc\n").unwrap_err();
        assert!(matches!(err, SpecError::Parse { line: 4, .. }));
        let err = DeviceSpec::parse("q = 3\n").unwrap_err();
        assert!(matches!(err, SpecError::Parse { line: 1, .. }));
        let err = DeviceSpec::parse("[extra]\n").unwrap_err();
        assert!(matches!(err, SpecError::Parse { line: 1, .. }));
        let err = DeviceSpec::parse("[vertical]\nq = 3\nq = 4\n").unwrap_err();
        assert!(matches!(err, SpecError::Parse { line: 3, .. }));
        let err = DeviceSpec::parse("[vertical]\nf0_hz = 60000\n").unwrap_err();
        assert!(matches!(&err, SpecError::Invariant { field, .. } if field == "vertical.f0"));
        let err = DeviceSpec::parse("[vertical]\nq = 0.5\n").unwrap_err();
        assert!(matches!(&err, SpecError::Invariant { field, .. } if field == "vertical.q"));
    }

    #[test]
    fn stiffness_key() {
        let j = DeviceSpec::default().horizontal.inertia;
        let k = required_stiffness(j, 54175.0);
        let s = DeviceSpec::parse(&format!("[horizontal]\nstiffness_n_m_per_rad = {k:e}\n")).unwrap();
        assert_relative_eq!(s.horizontal.inertia, j, max_relative = 1e-14);
        let err = DeviceSpec::parse(&format!(
            "[horizontal]\ninertia_kg_m2 = {j:e}\nstiffness_n_m_per_rad = {:e}\n",
            k * 1.001
        ))
        .unwrap_err();
        assert!(matches!(&err, SpecError::Invariant { field, .. } if field == "horizontal.stiffness"));
    }

    #[test]
    fn canonical_text_round_trip() {
        let text = DeviceSpec::default().to_canonical_text();
        let once = DeviceSpec::parse(&text).unwrap();
        let text2 = once.to_canonical_text();
        assert_eq!(text, text2);
        let twice = DeviceSpec::parse(&text2).unwrap();
        assert_eq!(once, twice);
        assert!(text.contains("[horizontal]\nf0_hz = 54175\nq = 1050\nq_mounted = 642.76\nfea_target_hz = 54504\n"));
    }
}
