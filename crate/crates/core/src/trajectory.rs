//! Two-axis Lissajous trajectories, repeat periods and coverage.
//!
//! Positions are full-scan optical angles centred on the origin:
//!
//! ```text
//! x(t) = (θ_h/2)·sin(2π·f_h·t + φ_h)
//! y(t) = (θ_v/2)·sin(2π·f_v·t + φ_v)
//! ```
//!
//! Coverage is measured on a `cols × rows` grid spanning
//! `[-θ_h/2, θ_h/2] × [-θ_v/2, θ_v/2]`. A cell counts as covered when the
//! beam path enters it. For generated trajectories the path between samples
//! is the analytic curve itself, with grid-line crossings solved in closed
//! form; the result is then independent of the sample rate, and a finer rate
//! only extends the time span. Trajectories without a generator (imported
//! point lists) fall back to the polyline through consecutive samples. An
//! axis with zero extent collapses onto its centre cell.

use std::f64::consts::TAU;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("invalid trajectory setting `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("grid must be at least 1x1, got {cols}x{rows}")]
    EmptyGrid { cols: usize, rows: usize },
    #[error("trajectory has no points")]
    EmptyTrajectory,
    #[error("both scan extents are zero; a {cols}x{rows} grid is degenerate")]
    DegenerateExtent { cols: usize, rows: usize },
    #[error("raster must be at least 8x8, got {width}x{height}")]
    RasterTooSmall { width: usize, height: usize },
}

pub type Result<T> = std::result::Result<T, TrajectoryError>;

/// Longest repeat period searched for (s).
pub const MAX_REPEAT_PERIOD: f64 = 10.0;

/// Relative tolerance used for commensurability by default.
pub const DEFAULT_REPEAT_TOLERANCE: f64 = 1e-9;

/// Default drive phases (deg): horizontal 90°, vertical 0°.
pub const DEFAULT_PHASES_DEG: (f64, f64) = (90.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryConfig {
    /// Hz
    pub f_h: f64,
    /// Hz
    pub f_v: f64,
    /// Full optical scan angle (deg).
    pub theta_h: f64,
    /// Full optical scan angle (deg).
    pub theta_v: f64,
    pub phase_h_deg: f64,
    pub phase_v_deg: f64,
    /// Hz
    pub sample_rate: f64,
    /// s
    pub duration: f64,
}

impl TrajectoryConfig {
    /// Config with the default phases.
    pub fn new(f_h: f64, f_v: f64, theta_h: f64, theta_v: f64, sample_rate: f64, duration: f64) -> Self {
        Self {
            f_h,
            f_v,
            theta_h,
            theta_v,
            phase_h_deg: DEFAULT_PHASES_DEG.0,
            phase_v_deg: DEFAULT_PHASES_DEG.1,
            sample_rate,
            duration,
        }
    }

    pub fn with_phases(mut self, phase_h_deg: f64, phase_v_deg: f64) -> Self {
        self.phase_h_deg = phase_h_deg;
        self.phase_v_deg = phase_v_deg;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: String| Err(TrajectoryError::InvalidConfig { field, reason });
        if !(self.f_h > 0.0 && self.f_h.is_finite()) {
            return bad("f_h", format!("must be > 0, got {}", self.f_h));
        }
        if !(self.f_v > 0.0 && self.f_v.is_finite()) {
            return bad("f_v", format!("must be > 0, got {}", self.f_v));
        }
        if !(self.theta_h >= 0.0 && self.theta_h.is_finite()) {
            return bad("theta_h", format!("must be >= 0, got {}", self.theta_h));
        }
        if !(self.theta_v >= 0.0 && self.theta_v.is_finite()) {
            return bad("theta_v", format!("must be >= 0, got {}", self.theta_v));
        }
        if !(self.phase_h_deg.is_finite() && self.phase_v_deg.is_finite()) {
            return bad("phase", "must be finite".into());
        }
        let min_rate = 10.0 * self.f_h.max(self.f_v);
        if !(self.sample_rate >= min_rate && self.sample_rate.is_finite()) {
            return bad(
                "sample_rate",
                format!("must be >= {min_rate} Hz (10x the fastest axis), got {}", self.sample_rate),
            );
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration", format!("must be > 0, got {}", self.duration));
        }
        Ok(())
    }

    /// Number of samples, `floor(duration·sample_rate) + 1`.
    pub fn sample_count(&self) -> usize {
        (self.duration * self.sample_rate * (1.0 + 1e-12)).floor() as usize + 1
    }

    /// Beam position (deg) at time `t`.
    pub fn position(&self, t: f64) -> (f64, f64) {
        (
            0.5 * self.theta_h * unit_sine(self.f_h, t, self.phase_h_deg),
            0.5 * self.theta_v * unit_sine(self.f_v, t, self.phase_v_deg),
        )
    }
}

fn unit_sine(f: f64, t: f64, phase_deg: f64) -> f64 {
    // Reduce to one cycle first so long runs keep full phase precision.
    let cycles = (f * t).fract() + phase_deg / 360.0;
    (TAU * cycles).sin()
}

/// Sampled beam path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    /// Full scan extents (deg) the points are bounded by.
    pub theta_h: f64,
    pub theta_v: f64,
    pub points: Vec<(f64, f64)>,
    /// Generator, when known. Enables exact coverage between samples.
    pub source: Option<TrajectoryConfig>,
}

impl Trajectory {
    /// Trajectory from raw samples with no known generator.
    pub fn from_points(dt: f64, theta_h: f64, theta_v: f64, points: Vec<(f64, f64)>) -> Self {
        Self {
            dt,
            theta_h,
            theta_v,
            points,
            source: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }
}

pub fn generate(config: &TrajectoryConfig) -> Result<Trajectory> {
    config.validate()?;
    let n = config.sample_count();
    let points = (0..n)
        .map(|i| config.position(i as f64 / config.sample_rate))
        .collect();
    Ok(Trajectory {
        dt: 1.0 / config.sample_rate,
        theta_h: config.theta_h,
        theta_v: config.theta_v,
        points,
        source: Some(*config),
    })
}

/// Smallest `T ≤ 10 s` at which both axes complete a whole number of cycles,
/// within relative tolerance `tolerance` on the frequency ratio.
///
/// `T = q / f_v` where `p/q` is the simplest fraction within tolerance of
/// `f_h / f_v`.
pub fn repeat_period(f_h: f64, f_v: f64, tolerance: f64) -> Option<f64> {
    assert!(f_h > 0.0 && f_v > 0.0, "frequencies must be positive");
    let ratio = f_h / f_v;
    let tol = tolerance.abs();
    let max_den = (MAX_REPEAT_PERIOD * f_v * (1.0 + 1e-12)).floor();
    if max_den < 1.0 {
        return None;
    }
    let (_, q) = simplest_fraction_between(ratio * (1.0 - tol), ratio * (1.0 + tol), max_den as u64)?;
    Some(q as f64 / f_v)
}

/// Fraction `p/q` in `[lo, hi]` with the smallest denominator, provided that
/// denominator does not exceed `max_den`.
pub fn simplest_fraction_between(lo: f64, hi: f64, max_den: u64) -> Option<(u64, u64)> {
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return None;
    }
    // Continued-fraction descent. (p0/q0, p1/q1) are the last two convergents
    // of the shared prefix.
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..64 {
        let n = lo.floor();
        if n < lo && n + 1.0 <= hi || n == lo {
            // An integer lies in [lo, hi]; take the smallest one.
            let a = if n == lo { n } else { n + 1.0 } as u64;
            let p = a.checked_mul(p1)?.checked_add(p0)?;
            let q = a.checked_mul(q1)?.checked_add(q0)?;
            return (q <= max_den).then_some((p, q));
        }
        let a = n as u64;
        let p = a.checked_mul(p1)?.checked_add(p0)?;
        let q = a.checked_mul(q1)?.checked_add(q0)?;
        if q > max_den {
            return None;
        }
        (p0, q0, p1, q1) = (p1, q1, p, q);
        let (next_lo, next_hi) = (1.0 / (hi - n), 1.0 / (lo - n));
        lo = next_lo;
        hi = next_hi;
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageReport {
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub covered_cells: usize,
    pub fill_fraction: f64,
    pub repeat_period: Option<f64>,
    pub repetition_rate: Option<f64>,
}

impl CoverageReport {
    pub fn with_repeat_period(mut self, period: Option<f64>) -> Self {
        self.repeat_period = period;
        self.repetition_rate = period.map(|t| 1.0 / t);
        self
    }
}

/// Maps a coordinate onto continuous grid units `[0, cells]`.
fn to_grid(value: f64, extent: f64, cells: usize) -> f64 {
    if extent == 0.0 {
        return (cells / 2) as f64;
    }
    (value / extent + 0.5) * cells as f64
}

fn cell_index(u: f64, cells: usize) -> usize {
    if u <= 0.0 {
        0
    } else {
        (u.floor() as usize).min(cells - 1)
    }
}

/// Marks every cell entered by the beam path: the analytic curve when the
/// generator is known, else the polyline through the samples.
pub fn coverage_mask(trajectory: &Trajectory, cols: usize, rows: usize) -> Result<Vec<bool>> {
    if cols == 0 || rows == 0 {
        return Err(TrajectoryError::EmptyGrid { cols, rows });
    }
    if trajectory.is_empty() {
        return Err(TrajectoryError::EmptyTrajectory);
    }
    if trajectory.theta_h == 0.0 && trajectory.theta_v == 0.0 && cols * rows > 1 {
        return Err(TrajectoryError::DegenerateExtent { cols, rows });
    }
    let mut mask = vec![false; cols * rows];
    if let Some(cfg) = &trajectory.source {
        let t_end = trajectory.time(trajectory.len() - 1);
        trace_curve(cfg, t_end, cols, rows, &mut mask);
        return Ok(mask);
    }
    let grid_pt = |&(x, y): &(f64, f64)| {
        (
            to_grid(x, trajectory.theta_h, cols),
            to_grid(y, trajectory.theta_v, rows),
        )
    };
    let mut prev = grid_pt(&trajectory.points[0]);
    mask[cell_index(prev.1, rows) * cols + cell_index(prev.0, cols)] = true;
    for p in &trajectory.points[1..] {
        let next = grid_pt(p);
        traverse(prev, next, cols, rows, &mut mask);
        prev = next;
    }
    Ok(mask)
}

/// One axis of the curve in grid units: `u(t) = centre + half·sin(2π·w(t))`
/// with `w(t) = f·t + φ/360` cycles.
struct AxisCurve {
    f: f64,
    phase_cycles: f64,
    half: f64,
    centre: f64,
}

impl AxisCurve {
    fn new(f: f64, phase_deg: f64, extent: f64, cells: usize) -> Self {
        let (half, centre) = if extent == 0.0 {
            (0.0, (cells / 2) as f64)
        } else {
            (cells as f64 / 2.0, cells as f64 / 2.0)
        };
        Self {
            f,
            phase_cycles: phase_deg / 360.0,
            half,
            centre,
        }
    }

    fn cycles(&self, t: f64) -> f64 {
        self.f * t + self.phase_cycles
    }

    fn time_at_cycles(&self, w: f64) -> f64 {
        (w - self.phase_cycles) / self.f
    }

    fn value(&self, t: f64) -> f64 {
        self.centre + self.half * unit_sine(self.f, t, self.phase_cycles * 360.0)
    }

    /// Times of the turning points strictly inside `(t0, t1)`.
    fn turning_points(&self, t0: f64, t1: f64, out: &mut Vec<f64>) {
        if self.half == 0.0 {
            return;
        }
        // Extrema sit at w = 1/4 + k/2.
        let k_lo = (2.0 * (self.cycles(t0) - 0.25)).floor() as i64;
        let k_hi = (2.0 * (self.cycles(t1) - 0.25)).ceil() as i64;
        for k in k_lo..=k_hi {
            let t = self.time_at_cycles(0.25 + 0.5 * k as f64);
            if t > t0 && t < t1 {
                out.push(t);
            }
        }
    }

    /// Times in `[t0, t1]` where the curve crosses an integer grid line,
    /// given that the axis is monotone on that interval.
    fn line_crossings(&self, t0: f64, t1: f64, out: &mut Vec<f64>) {
        if self.half == 0.0 {
            return;
        }
        let (u0, u1) = (self.value(t0), self.value(t1));
        let (lo, hi) = (u0.min(u1), u0.max(u1));
        // Half-cycle branch: w in [c/2 - 1/4, c/2 + 1/4].
        let c = (2.0 * self.cycles(0.5 * (t0 + t1))).round();
        let sign = if c.rem_euclid(2.0) == 0.0 { 1.0 } else { -1.0 };
        for k in (lo.ceil() as i64)..=(hi.floor() as i64) {
            let s = ((k as f64 - self.centre) / self.half).clamp(-1.0, 1.0);
            let w = 0.5 * c + sign * s.asin() / TAU;
            let t = self.time_at_cycles(w);
            if t >= t0 && t <= t1 {
                out.push(t);
            }
        }
    }
}

/// Exact traversal of the analytic curve over `[0, t_end]`.
fn trace_curve(cfg: &TrajectoryConfig, t_end: f64, cols: usize, rows: usize, mask: &mut [bool]) {
    let h = AxisCurve::new(cfg.f_h, cfg.phase_h_deg, cfg.theta_h, cols);
    let v = AxisCurve::new(cfg.f_v, cfg.phase_v_deg, cfg.theta_v, rows);
    let mut mark = |t: f64| {
        let ci = cell_index(h.value(t), cols);
        let cj = cell_index(v.value(t), rows);
        mask[cj * cols + ci] = true;
    };

    let mut breaks = vec![0.0, t_end];
    h.turning_points(0.0, t_end, &mut breaks);
    v.turning_points(0.0, t_end, &mut breaks);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    mark(0.0);
    let mut events = Vec::new();
    for piece in breaks.windows(2) {
        let (t0, t1) = (piece[0], piece[1]);
        events.clear();
        events.push(t0);
        events.push(t1);
        h.line_crossings(t0, t1, &mut events);
        v.line_crossings(t0, t1, &mut events);
        events.sort_by(f64::total_cmp);
        // Between consecutive crossings the curve stays inside one cell.
        for span in events.windows(2) {
            if span[1] > span[0] {
                mark(0.5 * (span[0] + span[1]));
            }
        }
    }
    mark(t_end);
}

/// Grid traversal of one segment (Amanatides–Woo), marking each cell visited.
fn traverse(a: (f64, f64), b: (f64, f64), cols: usize, rows: usize, mask: &mut [bool]) {
    let (du, dv) = (b.0 - a.0, b.1 - a.1);
    let (mut i, mut j) = (a.0.floor(), a.1.floor());
    let step_i = du.signum();
    let step_j = dv.signum();
    let first_crossing = |start: f64, cell: f64, d: f64| {
        if d > 0.0 {
            (cell + 1.0 - start) / d
        } else if d < 0.0 {
            (start - cell) / -d
        } else {
            f64::INFINITY
        }
    };
    let mut t_max_i = first_crossing(a.0, i, du);
    let mut t_max_j = first_crossing(a.1, j, dv);
    let t_delta_i = if du != 0.0 { 1.0 / du.abs() } else { f64::INFINITY };
    let t_delta_j = if dv != 0.0 { 1.0 / dv.abs() } else { f64::INFINITY };
    let mark = |i: f64, j: f64, mask: &mut [bool]| {
        let ci = cell_index(i, cols);
        let cj = cell_index(j, rows);
        mask[cj * cols + ci] = true;
    };
    // A segment spans at most cols + rows boundaries inside the grid.
    for _ in 0..(cols + rows + 4) {
        let t_next = t_max_i.min(t_max_j);
        if t_next >= 1.0 {
            break;
        }
        if t_max_i < t_max_j {
            i += step_i;
            t_max_i += t_delta_i;
        } else if t_max_j < t_max_i {
            j += step_j;
            t_max_j += t_delta_j;
        } else {
            i += step_i;
            j += step_j;
            t_max_i += t_delta_i;
            t_max_j += t_delta_j;
        }
        mark(i, j, mask);
    }
    mark(b.0.floor(), b.1.floor(), mask);
}

pub fn coverage(trajectory: &Trajectory, grid_cols: usize, grid_rows: usize) -> Result<CoverageReport> {
    let mask = coverage_mask(trajectory, grid_cols, grid_rows)?;
    let covered = mask.iter().filter(|&&m| m).count();
    Ok(CoverageReport {
        grid_cols,
        grid_rows,
        covered_cells: covered,
        fill_fraction: covered as f64 / mask.len() as f64,
        repeat_period: None,
        repetition_rate: None,
    })
}

/// 8-bit grayscale raster, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Binary PGM (`P5`) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Dwell-weighted raster of the beam path, scaled so the most visited pixel
/// is 255. The scan rectangle fills the image; +y points up.
pub fn render_pattern(trajectory: &Trajectory, width_px: usize, height_px: usize) -> Result<GrayImage> {
    if width_px < 8 || height_px < 8 {
        return Err(TrajectoryError::RasterTooSmall {
            width: width_px,
            height: height_px,
        });
    }
    if trajectory.is_empty() {
        return Err(TrajectoryError::EmptyTrajectory);
    }
    let mut dwell = vec![0u64; width_px * height_px];
    for &(x, y) in &trajectory.points {
        let col = cell_index(to_grid(x, trajectory.theta_h, width_px), width_px);
        let row_up = cell_index(to_grid(y, trajectory.theta_v, height_px), height_px);
        let row = height_px - 1 - row_up;
        dwell[row * width_px + col] += 1;
    }
    let max = *dwell.iter().max().expect("non-empty raster") as f64;
    let pixels = dwell
        .iter()
        .map(|&d| (255.0 * d as f64 / max).round() as u8)
        .collect();
    Ok(GrayImage {
        width: width_px,
        height: height_px,
        pixels,
    })
}
