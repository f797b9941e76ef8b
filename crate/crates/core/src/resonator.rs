//! Single-axis damped, driven torsional resonator.
//!
//! The resonator is written in normalized form,
//!
//! ```text
//! θ'' + (ω0/Q)·θ' + ω0²·θ = ω0²·g·τ(t)
//! ```
//!
//! where `g` is the static gain (rad per unit normalized torque) and `τ` is a
//! dimensionless drive. Physical torque units never appear here; the
//! actuation module maps volts onto this normalized drive.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResonatorError {
    #[error("invalid resonator parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("frequency response has no interior maximum")]
    NoInteriorPeak,
    #[error("-3 dB crossing on the {side} side of the peak lies outside the sweep")]
    CrossingNotBracketed { side: &'static str },
    #[error("{count} local maxima exceed 1/sqrt(2) of the global peak")]
    MultiplePeaks { count: usize },
    #[error("time step {dt:e} s exceeds the stability bound {bound:e} s (1/(50 f0))")]
    StepTooLarge { dt: f64, bound: f64 },
    #[error("invalid simulation setting: {0}")]
    InvalidSimulation(String),
    #[error("integration produced a non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("found {found} positive peaks, need at least {needed}")]
    InsufficientPeaks { found: usize, needed: usize },
    #[error("oscillation is not decaying (mean log decrement {decrement:e})")]
    NonDecaying { decrement: f64 },
}

pub type Result<T> = std::result::Result<T, ResonatorError>;

/// Minimum number of decaying positive peaks for a ringdown estimate.
pub const MIN_RINGDOWN_PEAKS: usize = 10;

/// Per-cycle log decrement below which a free oscillation counts as
/// non-decaying (Q above roughly 3e6).
const MIN_LOG_DECREMENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonatorParams {
    pub f0: f64,
    pub q_factor: f64,
    pub static_gain: f64,
}

impl ResonatorParams {
    /// Resonator with unit static gain.
    pub fn new(f0: f64, q_factor: f64) -> Result<Self> {
        Self::with_gain(f0, q_factor, 1.0)
    }

    pub fn with_gain(f0: f64, q_factor: f64, static_gain: f64) -> Result<Self> {
        let p = Self {
            f0,
            q_factor,
            static_gain,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f0.is_finite() && self.f0 > 0.0) {
            return Err(invalid("f0", format!("must be > 0, got {}", self.f0)));
        }
        if !(self.q_factor.is_finite() && self.q_factor > 0.5) {
            return Err(invalid(
                "q_factor",
                format!("must be > 0.5, got {}", self.q_factor),
            ));
        }
        if !(self.static_gain.is_finite() && self.static_gain > 0.0) {
            return Err(invalid(
                "static_gain",
                format!("must be > 0, got {}", self.static_gain),
            ));
        }
        Ok(())
    }

    pub fn omega0(&self) -> f64 {
        TAU * self.f0
    }

    /// Frequency of the magnitude maximum, `f0·sqrt(1 - 1/(2Q²))`.
    ///
    /// Returns 0 when the response is monotone (Q ≤ 1/√2).
    pub fn peak_frequency(&self) -> f64 {
        let s = 1.0 - 0.5 / (self.q_factor * self.q_factor);
        if s <= 0.0 {
            0.0
        } else {
            self.f0 * s.sqrt()
        }
    }

    /// Largest magnitude of the response.
    pub fn peak_amplitude(&self) -> f64 {
        amplitude_response(self, self.peak_frequency()).0
    }

    /// Magnitude at `f` divided by the peak magnitude.
    pub fn normalized_magnitude(&self, f: f64) -> f64 {
        amplitude_response(self, f).0 / self.peak_amplitude()
    }
}

fn invalid(field: &'static str, reason: String) -> ResonatorError {
    ResonatorError::InvalidParam { field, reason }
}

/// Magnitude (rad) and phase (deg, in `[-180, 0]`) of the driven response.
pub fn amplitude_response(params: &ResonatorParams, f: f64) -> (f64, f64) {
    debug_assert!(f >= 0.0, "negative frequency {f}");
    let r = f / params.f0;
    let re = 1.0 - r * r;
    let im = r / params.q_factor;
    let mag = params.static_gain / re.hypot(im);
    let phase = -im.atan2(re).to_degrees();
    (mag, phase)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseSample {
    pub frequency: f64,
    pub amplitude: f64,
    pub phase_deg: f64,
}

/// Amplitude and phase sampled on a strictly increasing frequency grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrequencyResponse {
    samples: Vec<ResponseSample>,
}

impl FrequencyResponse {
    pub fn new(samples: Vec<ResponseSample>) -> Result<Self> {
        for w in samples.windows(2) {
            if !(w[1].frequency > w[0].frequency) {
                return Err(ResonatorError::InvalidSweep(format!(
                    "frequencies not strictly increasing at {} Hz",
                    w[1].frequency
                )));
            }
        }
        if let Some(s) = samples
            .iter()
            .find(|s| !(s.amplitude >= 0.0) || !s.frequency.is_finite())
        {
            return Err(ResonatorError::InvalidSweep(format!(
                "bad sample at {} Hz (amplitude {})",
                s.frequency, s.amplitude
            )));
        }
        Ok(Self { samples })
    }

    /// Builds a magnitude-only response (phase set to 0).
    pub fn from_amplitudes(freqs: &[f64], amps: &[f64]) -> Result<Self> {
        if freqs.len() != amps.len() {
            return Err(ResonatorError::InvalidSweep(
                "frequency and amplitude columns differ in length".into(),
            ));
        }
        Self::new(
            freqs
                .iter()
                .zip(amps)
                .map(|(&frequency, &amplitude)| ResponseSample {
                    frequency,
                    amplitude,
                    phase_deg: 0.0,
                })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[ResponseSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.frequency)
    }

    pub fn amplitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.amplitude)
    }

    /// Index of the largest amplitude (first one on ties).
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.samples.iter().enumerate() {
            if best.is_none_or(|(_, a)| s.amplitude > a) {
                best = Some((i, s.amplitude));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Frequency grid with `n` points from `f_start` to `f_end` inclusive.
pub fn frequency_grid(f_start: f64, f_end: f64, n: usize, spacing: Spacing) -> Result<Vec<f64>> {
    if !(f_start > 0.0 && f_end > f_start && f_end.is_finite()) {
        return Err(ResonatorError::InvalidSweep(format!(
            "need 0 < f_start < f_end, got {f_start}..{f_end}"
        )));
    }
    if n < 2 {
        return Err(ResonatorError::InvalidSweep(format!(
            "need at least 2 points, got {n}"
        )));
    }
    let last = (n - 1) as f64;
    let grid = (0..n)
        .map(|i| {
            if i == n - 1 {
                return f_end;
            }
            let u = i as f64 / last;
            match spacing {
                Spacing::Linear => f_start + (f_end - f_start) * u,
                Spacing::Log => f_start * (f_end / f_start).powf(u),
            }
        })
        .collect();
    Ok(grid)
}

/// Evaluates [`amplitude_response`] on a frequency grid.
pub fn sweep(
    params: &ResonatorParams,
    f_start: f64,
    f_end: f64,
    n_points: usize,
    spacing: Spacing,
) -> Result<FrequencyResponse> {
    params.validate()?;
    let samples = frequency_grid(f_start, f_end, n_points, spacing)?
        .into_iter()
        .map(|f| {
            let (amplitude, phase_deg) = amplitude_response(params, f);
            ResponseSample {
                frequency: f,
                amplitude,
                phase_deg,
            }
        })
        .collect();
    FrequencyResponse::new(samples)
}

/// Result of a half-power bandwidth analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthEstimate {
    pub f0: f64,
    pub q_factor: f64,
    pub f_lo: f64,
    pub f_hi: f64,
    pub peak_amplitude: f64,
}

impl BandwidthEstimate {
    pub fn bandwidth(&self) -> f64 {
        self.f_hi - self.f_lo
    }
}

/// Resonance frequency and Q from the -3 dB (1/√2 of peak) crossings.
///
/// Crossings are located by linear interpolation between the bracketing
/// samples; the peak frequency comes from a parabola through the largest
/// sample and its neighbours.
///
/// Interpolation error grows with sample spacing: at 15 or more samples per
/// -3 dB bandwidth the Q error stays under 0.5%; at 10 it can exceed 1%.
pub fn q_from_bandwidth(response: &FrequencyResponse) -> Result<BandwidthEstimate> {
    let s = response.samples();
    let ipk = response.argmax().ok_or(ResonatorError::NoInteriorPeak)?;
    if ipk == 0 || ipk + 1 >= s.len() {
        // The maximum sits on an edge; report the side that is missing.
        if s.len() >= 2 {
            let side = if ipk == 0 { "low" } else { "high" };
            return Err(ResonatorError::CrossingNotBracketed { side });
        }
        return Err(ResonatorError::NoInteriorPeak);
    }
    let peak = s[ipk].amplitude;
    if !(peak > 0.0) {
        return Err(ResonatorError::NoInteriorPeak);
    }
    let threshold = peak * FRAC_1_SQRT_2;

    let strong_maxima = (1..s.len() - 1)
        .filter(|&i| {
            s[i].amplitude > s[i - 1].amplitude
                && s[i].amplitude >= s[i + 1].amplitude
                && s[i].amplitude > threshold
        })
        .count();
    if strong_maxima > 1 {
        return Err(ResonatorError::MultiplePeaks {
            count: strong_maxima,
        });
    }

    let lo = (0..ipk)
        .rev()
        .find(|&j| s[j].amplitude < threshold)
        .ok_or(ResonatorError::CrossingNotBracketed { side: "low" })?;
    let hi = (ipk + 1..s.len())
        .find(|&j| s[j].amplitude < threshold)
        .ok_or(ResonatorError::CrossingNotBracketed { side: "high" })?;
    let f_lo = interpolate_crossing(&s[lo], &s[lo + 1], threshold);
    let f_hi = interpolate_crossing(&s[hi - 1], &s[hi], threshold);

    let f0 = parabolic_vertex(
        (s[ipk - 1].frequency, s[ipk - 1].amplitude),
        (s[ipk].frequency, s[ipk].amplitude),
        (s[ipk + 1].frequency, s[ipk + 1].amplitude),
    );
    Ok(BandwidthEstimate {
        f0,
        q_factor: f0 / (f_hi - f_lo),
        f_lo,
        f_hi,
        peak_amplitude: peak,
    })
}

fn interpolate_crossing(a: &ResponseSample, b: &ResponseSample, level: f64) -> f64 {
    let da = b.amplitude - a.amplitude;
    if da == 0.0 {
        return 0.5 * (a.frequency + b.frequency);
    }
    a.frequency + (level - a.amplitude) * (b.frequency - a.frequency) / da
}

/// Abscissa of the vertex of the parabola through three points.
///
/// Falls back to the middle abscissa when the points are collinear.
pub(crate) fn parabolic_vertex(p0: (f64, f64), p1: (f64, f64), p2: (f64, f64)) -> f64 {
    let (x0, y0) = p0;
    let (x1, y1) = p1;
    let (x2, y2) = p2;
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let curvature = (d12 - d01) / (x2 - x0);
    if curvature == 0.0 || !curvature.is_finite() {
        return x1;
    }
    // y = y1 + b(x - x1) + c(x - x1)^2 with b the slope at x1
    let slope_at_x1 = d01 + curvature * (x1 - x0);
    let x = x1 - slope_at_x1 / (2.0 * curvature);
    x.clamp(x0, x2)
}

/// Golden-section search for the maximizer of a unimodal `f` on `[lo, hi]`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (hi - lo) <= rel_tol * 0.5 * (hi.abs() + lo.abs()) {
            break;
        }
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Angle and angular velocity sampled every `dt`, starting at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    pub dt: f64,
    pub samples: Vec<(f64, f64)>,
}

impl TimeTrace {
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn angles(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Settings for [`simulate_time_domain`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub duration: f64,
    pub dt: f64,
    pub initial_angle: f64,
    pub initial_velocity: f64,
    /// Drops the damping term entirely.
    pub undamped: bool,
}

impl SimConfig {
    /// Starts at rest, damped.
    pub fn new(duration: f64, dt: f64) -> Self {
        Self {
            duration,
            dt,
            initial_angle: 0.0,
            initial_velocity: 0.0,
            undamped: false,
        }
    }

    /// Recommended step, 1/(200·f0).
    pub fn recommended_dt(f0: f64) -> f64 {
        1.0 / (200.0 * f0)
    }

    pub fn with_initial(mut self, angle: f64, velocity: f64) -> Self {
        self.initial_angle = angle;
        self.initial_velocity = velocity;
        self
    }

    pub fn undamped(mut self) -> Self {
        self.undamped = true;
        self
    }

    /// Number of samples, `floor(duration/dt) + 1`.
    pub fn sample_count(&self) -> usize {
        // Absorb representation error when duration is an exact multiple of dt.
        let ratio = self.duration / self.dt;
        (ratio * (1.0 + 1e-12)).floor() as usize + 1
    }
}

/// Integrates the normalized resonator with classical fixed-step RK4.
///
/// `torque(t)` is the normalized drive. Steps larger than 1/(50·f0) are
/// rejected.
pub fn simulate_time_domain(
    params: &ResonatorParams,
    torque: impl Fn(f64) -> f64,
    config: &SimConfig,
) -> Result<TimeTrace> {
    params.validate()?;
    let SimConfig { duration, dt, .. } = *config;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(ResonatorError::InvalidSimulation(format!(
            "duration must be > 0, got {duration}"
        )));
    }
    let bound = 1.0 / (50.0 * params.f0);
    if !(dt > 0.0) {
        return Err(ResonatorError::InvalidSimulation(format!(
            "dt must be > 0, got {dt}"
        )));
    }
    if dt > bound {
        return Err(ResonatorError::StepTooLarge { dt, bound });
    }
    if !(config.initial_angle.is_finite() && config.initial_velocity.is_finite()) {
        return Err(ResonatorError::InvalidSimulation(
            "initial state must be finite".into(),
        ));
    }

    let w0 = params.omega0();
    let w0_sq = w0 * w0;
    let damping = if config.undamped {
        0.0
    } else {
        w0 / params.q_factor
    };
    let forcing = w0_sq * params.static_gain;
    let accel = |t: f64, th: f64, om: f64| -damping * om - w0_sq * th + forcing * torque(t);

    let n = config.sample_count();
    let mut samples = Vec::with_capacity(n);
    let (mut th, mut om) = (config.initial_angle, config.initial_velocity);
    samples.push((th, om));
    let half = 0.5 * dt;
    for step in 1..n {
        let t = (step - 1) as f64 * dt;
        let k1t = om;
        let k1o = accel(t, th, om);
        let k2t = om + half * k1o;
        let k2o = accel(t + half, th + half * k1t, om + half * k1o);
        let k3t = om + half * k2o;
        let k3o = accel(t + half, th + half * k2t, om + half * k2o);
        let k4t = om + dt * k3o;
        let k4o = accel(t + dt, th + dt * k3t, om + dt * k3o);
        th += dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
        om += dt / 6.0 * (k1o + 2.0 * k2o + 2.0 * k3o + k4o);
        if !(th.is_finite() && om.is_finite()) {
            return Err(ResonatorError::NonFinite { step });
        }
        samples.push((th, om));
    }
    Ok(TimeTrace { dt, samples })
}

/// Oscillator energy per unit inertia, `½ω0²θ² + ½θ'²`.
pub fn oscillator_energy(params: &ResonatorParams, angle: f64, velocity: f64) -> f64 {
    let w0 = params.omega0();
    0.5 * w0 * w0 * angle * angle + 0.5 * velocity * velocity
}

/// Amplitude and phase (deg) of the trace against `sin(2π f t)`, measured by
/// quadrature demodulation over the last `cycles` drive periods.
pub fn steady_state_response(trace: &TimeTrace, f_drive: f64, cycles: f64) -> Result<(f64, f64)> {
    let window = (cycles / (f_drive * trace.dt)).round() as usize;
    if window < 2 || window > trace.len() {
        return Err(ResonatorError::InvalidSimulation(format!(
            "trace of {} samples cannot hold {cycles} cycles at {f_drive} Hz",
            trace.len()
        )));
    }
    let start = trace.len() - window;
    let w = TAU * f_drive;
    let (mut in_phase, mut quadrature) = (0.0, 0.0);
    for (i, &(th, _)) in trace.samples.iter().enumerate().skip(start) {
        let (s, c) = (w * trace.time(i)).sin_cos();
        in_phase += th * s;
        quadrature += th * c;
    }
    let scale = 2.0 / window as f64;
    let (in_phase, quadrature) = (in_phase * scale, quadrature * scale);
    Ok((
        in_phase.hypot(quadrature),
        quadrature.atan2(in_phase).to_degrees(),
    ))
}

/// Quality factor from the log decrement of successive positive peaks of a
/// free decay: `Q = π / mean(ln(θ_k/θ_{k+1}))`.
///
/// Peaks are refined by parabolic interpolation; candidates closer than half
/// a period of `f0_hint` to the previous accepted peak are ignored.
pub fn ringdown_q(trace: &TimeTrace, f0_hint: f64) -> Result<f64> {
    if !(f0_hint > 0.0) {
        return Err(ResonatorError::InvalidSimulation(format!(
            "f0 hint must be > 0, got {f0_hint}"
        )));
    }
    let min_gap = 0.5 / f0_hint;
    let s = &trace.samples;
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for i in 1..s.len().saturating_sub(1) {
        let (a, b, c) = (s[i - 1].0, s[i].0, s[i + 1].0);
        if !(b > 0.0 && b > a && b >= c) {
            continue;
        }
        let t = trace.time(i);
        let x = parabolic_vertex(
            (t - trace.dt, a),
            (t, b),
            (t + trace.dt, c),
        );
        let u = (x - t) / trace.dt;
        // value of the interpolating parabola at its vertex
        let height = b + 0.25 * (c - a) * u;
        if let Some(&(t_prev, _)) = peaks.last() {
            if x - t_prev < min_gap {
                continue;
            }
        }
        peaks.push((x, height));
    }
    if peaks.len() < MIN_RINGDOWN_PEAKS {
        return Err(ResonatorError::InsufficientPeaks {
            found: peaks.len(),
            needed: MIN_RINGDOWN_PEAKS,
        });
    }
    let first = peaks[0].1;
    let last = peaks[peaks.len() - 1].1;
    let decrement = (first / last).ln() / (peaks.len() - 1) as f64;
    if !(decrement > MIN_LOG_DECREMENT) {
        return Err(ResonatorError::NonDecaying { decrement });
    }
    Ok(PI / decrement)
}
