use mirrorscan::trajectory::{
    coverage, coverage_mask, generate, render_pattern, repeat_period, Trajectory, TrajectoryConfig,
    DEFAULT_REPEAT_TOLERANCE,
};
use proptest::prelude::*;

/// Independent coverage estimate: sample the analytic curve at 100x the
/// configured rate and bin every point.
fn dense_point_coverage(cfg: &TrajectoryConfig, cols: usize, rows: usize) -> Vec<bool> {
    let rate = cfg.sample_rate * 100.0;
    let n = (cfg.duration * rate).round() as usize;
    let mut mask = vec![false; cols * rows];
    let bin = |v: f64, extent: f64, cells: usize| -> usize {
        let u = ((v + extent / 2.0) / extent * cells as f64).floor();
        u.clamp(0.0, (cells - 1) as f64) as usize
    };
    for i in 0..=n {
        let t = i as f64 / rate;
        let x = cfg.theta_h / 2.0 * (2.0 * std::f64::consts::PI * cfg.f_h * t + cfg.phase_h_deg.to_radians()).sin();
        let y = cfg.theta_v / 2.0 * (2.0 * std::f64::consts::PI * cfg.f_v * t + cfg.phase_v_deg.to_radians()).sin();
        mask[bin(y, cfg.theta_v, rows) * cols + bin(x, cfg.theta_h, cols)] = true;
    }
    mask
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&m| m).count()
}

#[test]
fn three_two_figure_matches_dense_oracle() {
    let cfg = TrajectoryConfig::new(3.0, 2.0, 2.0, 2.0, 2000.0, 1.0);
    let tr = generate(&cfg).unwrap();
    let fast = coverage_mask(&tr, 8, 8).unwrap();
    let oracle = dense_point_coverage(&cfg, 8, 8);
    assert_eq!(fast, oracle);
}

#[test]
fn device_figure_matches_dense_oracle() {
    let cfg = TrajectoryConfig::new(54175.0, 3600.0, 11.5, 4.8, 2e6, 0.04);
    let tr = generate(&cfg).unwrap();
    let fast = coverage_mask(&tr, 64, 64).unwrap();
    let oracle = dense_point_coverage(&cfg, 64, 64);
    assert_eq!(count(&fast), count(&oracle));
    assert_eq!(fast, oracle);
}

#[test]
fn device_figure_closes_after_repeat_period() {
    let cfg = TrajectoryConfig::new(54175.0, 3600.0, 11.5, 4.8, 1e6, 0.05);
    let period = repeat_period(cfg.f_h, cfg.f_v, DEFAULT_REPEAT_TOLERANCE).unwrap();
    for t in [0.0, 1.3e-3, 7.77e-3] {
        let (x0, y0) = cfg.position(t);
        let (x1, y1) = cfg.position(t + period);
        assert!((x1 - x0).abs() < 1e-9 && (y1 - y0).abs() < 1e-9, "t={t}");
    }
}

#[test]
fn three_two_raster_is_mirror_symmetric() {
    let cfg = TrajectoryConfig::new(3.0, 2.0, 2.0, 2.0, 4000.0, 1.0);
    let img = render_pattern(&generate(&cfg).unwrap(), 64, 64).unwrap();
    for row in 0..64 {
        for col in 0..64 {
            assert_eq!(img.get(col, row) > 0, img.get(63 - col, row) > 0, "({col},{row})");
        }
    }
}

#[test]
fn one_to_one_in_phase_is_a_diagonal() {
    let cfg = TrajectoryConfig::new(50.0, 50.0, 3.0, 3.0, 50_000.0, 0.1).with_phases(0.0, 0.0);
    let mask = coverage_mask(&generate(&cfg).unwrap(), 16, 16).unwrap();
    for (idx, &m) in mask.iter().enumerate() {
        assert_eq!(m, idx / 16 == idx % 16, "cell {idx}");
    }
}

fn scaled(tr: &Trajectory, s: f64) -> Trajectory {
    Trajectory::from_points(
        tr.dt,
        tr.theta_h * s,
        tr.theta_v * s,
        tr.points.iter().map(|&(x, y)| (x * s, y * s)).collect(),
    )
}

#[test]
fn sample_polyline_matches_dense_oracle() {
    let cfg = TrajectoryConfig::new(3.0, 2.0, 2.0, 2.0, 2000.0, 1.0);
    let tr = generate(&cfg).unwrap();
    let raw = Trajectory::from_points(tr.dt, tr.theta_h, tr.theta_v, tr.points.clone());
    assert_eq!(coverage_mask(&raw, 8, 8).unwrap(), dense_point_coverage(&cfg, 8, 8));
}

#[test]
fn second_repeat_period_adds_nothing() {
    for (cfg, grid) in [
        (TrajectoryConfig::new(3.0, 2.0, 2.0, 2.0, 2000.0, 1.0), 8),
        (TrajectoryConfig::new(54175.0, 3600.0, 11.5, 4.8, 2e6, 0.04), 64),
    ] {
        let twice = TrajectoryConfig { duration: 2.0 * cfg.duration, ..cfg };
        let one = coverage_mask(&generate(&cfg).unwrap(), grid, grid).unwrap();
        let two = coverage_mask(&generate(&twice).unwrap(), grid, grid).unwrap();
        assert_eq!(one, two);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fill_is_invariant_under_amplitude_scaling(
        fh in 5u32..40, fv in 5u32..40, k in 0u32..4,
    ) {
        let base = TrajectoryConfig::new(fh as f64, fv as f64, 1.0, 1.0, 4000.0, 1.0);
        let tr = generate(&base).unwrap();
        let s = 2f64.powi(k as i32);
        let a = coverage(&tr, 24, 24).unwrap().fill_fraction;
        let big = generate(&TrajectoryConfig { theta_h: s, theta_v: s, ..base }).unwrap();
        for (p, q) in tr.points.iter().zip(&big.points) {
            prop_assert_eq!((p.0 * s, p.1 * s), *q);
        }
        prop_assert_eq!(a, coverage(&big, 24, 24).unwrap().fill_fraction);
        // polyline fallback on the scaled samples
        let raw = Trajectory::from_points(tr.dt, 1.0, 1.0, tr.points.clone());
        prop_assert_eq!(
            coverage(&raw, 24, 24).unwrap().fill_fraction,
            coverage(&scaled(&tr, s), 24, 24).unwrap().fill_fraction
        );
    }

    #[test]
    fn fill_never_drops_with_longer_runs(
        fh in 1.0f64..60.0, fv in 1.0f64..60.0, d in 0.05f64..1.0,
    ) {
        let short = TrajectoryConfig::new(fh, fv, 4.0, 3.0, 1000.0, d);
        let long = TrajectoryConfig { duration: d * 1.7, ..short };
        let a = coverage(&generate(&short).unwrap(), 20, 20).unwrap().fill_fraction;
        let b = coverage(&generate(&long).unwrap(), 20, 20).unwrap().fill_fraction;
        prop_assert!(b >= a);
    }

    #[test]
    fn fill_never_drops_with_finer_sampling(
        fh in 1.0f64..60.0, fv in 1.0f64..60.0, d in 0.05f64..1.0,
    ) {
        let coarse = TrajectoryConfig::new(fh, fv, 4.0, 3.0, 2000.0, d);
        let fine = TrajectoryConfig { sample_rate: 4000.0, ..coarse };
        let a = coverage(&generate(&coarse).unwrap(), 20, 20).unwrap().fill_fraction;
        let b = coverage(&generate(&fine).unwrap(), 20, 20).unwrap().fill_fraction;
        prop_assert!(b >= a, "coarse {} fine {}", a, b);
    }

    #[test]
    fn points_stay_inside_extents(
        fh in 1.0f64..1e5, fv in 1.0f64..1e4, th in 0.0f64..20.0, tv in 0.0f64..20.0,
        ph in -360.0f64..360.0, pv in -360.0f64..360.0,
    ) {
        let rate = 10.0 * fh.max(fv);
        let cfg = TrajectoryConfig::new(fh, fv, th, tv, rate, 200.0 / rate).with_phases(ph, pv);
        for (x, y) in generate(&cfg).unwrap().points {
            prop_assert!(x.abs() <= th / 2.0 && y.abs() <= tv / 2.0);
        }
    }
}
