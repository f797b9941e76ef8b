//! Subcommand bodies. Each builds its outputs in memory, then emits them
//! through an [`Emitter`] so every run ends with a verified manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mirrorscan::actuation::{
    marginal_gain_ratio, saturation_onset_vpp, voltage_response_curve, DriveSignal, MARGINAL_GAIN_THRESHOLD,
};
use mirrorscan::calibrate::{
    calibrate_device, fit_lorentzian, synthesize_device_datasets, AxisDatasets, CalibrationInputs, Noise,
    SweepDataset,
};
use mirrorscan::device::{lumped_estimate, Axis, DeviceSpec};
use mirrorscan::io;
use mirrorscan::optics::{bandwidth_efficiency_product, resolvable_spots, screen_width, ProjectionSetup};
use mirrorscan::resonator::{q_from_bandwidth, sweep, FrequencyResponse, ResonatorParams, Spacing};
use mirrorscan::trajectory::{
    coverage, generate, render_pattern, repeat_period, CoverageReport, GrayImage, Trajectory, TrajectoryConfig,
    TrajectoryError, DEFAULT_REPEAT_TOLERANCE,
};

use crate::args::{Cli, Command, Figure, Grid, Regime, SpacingArg};
use crate::output::{manifest_beside, Emitter};
use crate::report::Report;

/// Where a command's text goes.
pub struct Console<'a> {
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
}

impl Console<'_> {
    fn print(&mut self, report: &Report) -> Result<()> {
        self.stdout.write_all(report.as_str().as_bytes())?;
        Ok(())
    }

    fn warn(&mut self, message: &str) -> Result<()> {
        writeln!(self.stderr, "warning: {message}")?;
        Ok(())
    }
}

pub fn load_spec(path: Option<&Path>) -> Result<DeviceSpec> {
    match path {
        Some(p) => DeviceSpec::load(p).with_context(|| format!("loading device spec {}", p.display())),
        None => Ok(DeviceSpec::default()),
    }
}

fn spec_label(path: Option<&Path>) -> String {
    path.map_or_else(|| "default".to_string(), |p| p.display().to_string())
}

/// Runs one parsed command line. `argv` is recorded in manifests.
pub fn execute(cli: &Cli, argv: &[String], console: &mut Console<'_>) -> Result<()> {
    match &cli.command {
        Command::DeviceInfo {
            device,
            apply_over_etch,
            out,
        } => {
            let path = device.device.as_deref();
            let spec = load_spec(path)?;
            let report = device_info_report(&spec, &spec_label(path), *apply_over_etch);
            console.print(&report)?;
            if let Some(out) = out {
                let mut em = Emitter::new(argv, path);
                em.write(out, report.as_str().as_bytes())?;
                em.finish(&manifest_beside(out))?;
            }
        }
        Command::Sweep {
            device,
            axis,
            from_hz,
            to_hz,
            points,
            regime,
            spacing,
            out,
        } => {
            let path = device.device.as_deref();
            let spec = load_spec(path)?;
            let spacing = match spacing {
                SpacingArg::Linear => Spacing::Linear,
                SpacingArg::Log => Spacing::Log,
            };
            let run = sweep_run(&spec, *axis, *regime, *from_hz, *to_hz, *points, spacing)?;
            let mut em = Emitter::new(argv, path);
            em.write(out, io::response_csv(&run.response).as_bytes())?;
            em.finish(&manifest_beside(out))?;
            if let Some(w) = &run.warning {
                console.warn(w)?;
            }
            console.print(&run.report)?;
        }
        Command::Lissajous {
            device,
            duration_ms,
            sample_rate_hz,
            grid,
            raster_px,
            vpp,
            out,
        } => {
            let path = device.device.as_deref();
            let spec = load_spec(path)?;
            let run = lissajous_run(&spec, duration_ms * 1e-3, *sample_rate_hz, *grid, *raster_px, *vpp)?;
            let mut em = Emitter::new(argv, path);
            em.write(out, &run.image.to_pgm())?;
            em.write(&out.with_extension("csv"), io::trajectory_csv(&run.trajectory).as_bytes())?;
            em.finish(&manifest_beside(out))?;
            console.print(&run.report)?;
        }
        Command::VoltageResponse { device, axis, vpp, out } => {
            let path = device.device.as_deref();
            let spec = load_spec(path)?;
            let mut list: Vec<f64> = vpp.iter().flatten().copied().collect();
            list.sort_by(f64::total_cmp);
            let (rows, report) = voltage_run(&spec, *axis, &list)?;
            let mut em = Emitter::new(argv, path);
            em.write(out, io::voltage_csv(&rows).as_bytes())?;
            em.finish(&manifest_beside(out))?;
            console.print(&report)?;
        }
        Command::Metrics {
            device,
            distance_m,
            vpp,
            out,
        } => {
            let path = device.device.as_deref();
            let spec = load_spec(path)?;
            let report = metrics_report(&spec, *distance_m, *vpp)?;
            console.print(&report)?;
            if let Some(out) = out {
                let mut em = Emitter::new(argv, path);
                em.write(out, report.as_str().as_bytes())?;
                em.finish(&manifest_beside(out))?;
            }
        }
        Command::Calibrate {
            device,
            vertical_sweep,
            vertical_mounted_sweep,
            vertical_voltage,
            horizontal_sweep,
            horizontal_mounted_sweep,
            horizontal_voltage,
            out,
        } => {
            let path = device.device.as_deref();
            let spec = load_spec(path)?;
            let inputs = CalibrationInputs {
                vertical: read_axis_datasets(
                    Axis::Vertical,
                    vertical_sweep,
                    vertical_mounted_sweep,
                    vertical_voltage,
                )?,
                horizontal: read_axis_datasets(
                    Axis::Horizontal,
                    horizontal_sweep,
                    horizontal_mounted_sweep,
                    horizontal_voltage,
                )?,
            };
            if inputs.vertical.is_empty() && inputs.horizontal.is_empty() {
                bail!("no datasets given; pass at least one --vertical-* or --horizontal-* file");
            }
            let (updated, cal) = calibrate_device(&spec, &inputs)?;
            let mut em = Emitter::new(argv, path);
            em.write(out, updated.to_canonical_text().as_bytes())?;
            em.finish(&manifest_beside(out))?;
            let mut report = Report::new();
            report.raw(&cal.to_text());
            console.print(&report)?;
        }
        Command::SynthData {
            device,
            seed,
            noise_pct,
            out,
        } => {
            let path = device.device.as_deref();
            let spec = load_spec(path)?;
            if !(*noise_pct >= 0.0 && noise_pct.is_finite()) {
                bail!("--noise-pct must be >= 0, got {noise_pct}");
            }
            let noise = (*noise_pct > 0.0).then_some(Noise {
                relative: noise_pct / 100.0,
                seed: *seed,
            });
            let inputs = synthesize_device_datasets(&spec, noise)?;
            create_dir(out)?;
            let mut em = Emitter::new(argv, path);
            let mut report = Report::new();
            report.section("synth_data");
            for axis in Axis::BOTH {
                let d = inputs.axis(axis);
                let files = [
                    ("sweep", d.sweep.as_ref().map(io::sweep_dataset_csv)),
                    ("mounted_sweep", d.mounted_sweep.as_ref().map(io::sweep_dataset_csv)),
                    ("voltage", d.voltage.as_ref().map(io::voltage_dataset_csv)),
                ];
                for (kind, text) in files {
                    if let Some(text) = text {
                        let file = out.join(format!("{axis}_{kind}.csv"));
                        em.write(&file, text.as_bytes())?;
                        report.text(&format!("{axis}_{kind}"), &file.display().to_string());
                    }
                }
            }
            em.finish(&out.join("manifest.json"))?;
            console.print(&report)?;
        }
        Command::Reproduce { figure, device, out } => {
            let path = device.device.as_deref();
            let spec = load_spec(path)?;
            create_dir(out)?;
            let mut em = Emitter::new(argv, path);
            let report = reproduce(*figure, &spec, out, &mut em)?;
            em.finish(&out.join("manifest.json"))?;
            console.print(&report)?;
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))
}

fn read_axis_datasets(
    axis: Axis,
    sweep: &Option<PathBuf>,
    mounted: &Option<PathBuf>,
    voltage: &Option<PathBuf>,
) -> Result<AxisDatasets> {
    let open = |p: &Path| fs::File::open(p).with_context(|| format!("opening {}", p.display()));
    let read_sweep = |p: &PathBuf, label: String| -> Result<SweepDataset> {
        io::read_sweep_dataset(open(p)?, &label).with_context(|| format!("reading {}", p.display()))
    };
    Ok(AxisDatasets {
        sweep: sweep.as_ref().map(|p| read_sweep(p, format!("{axis}_sweep"))).transpose()?,
        mounted_sweep: mounted
            .as_ref()
            .map(|p| read_sweep(p, format!("{axis}_mounted_sweep")))
            .transpose()?,
        voltage: voltage
            .as_ref()
            .map(|p| {
                io::read_voltage_dataset(open(p)?, &format!("{axis}_voltage"))
                    .with_context(|| format!("reading {}", p.display()))
            })
            .transpose()?,
    })
}

pub fn device_info_report(spec: &DeviceSpec, label: &str, apply_over_etch: bool) -> Report {
    let mut r = Report::new();
    r.section("device").text("spec", label).int("over_etch_applied", apply_over_etch);
    r.section("geometry");
    for (key, value) in spec.geometry.keyed_values() {
        r.num(key, value);
    }
    r.section("material")
        .num("density_kg_m3", spec.material.density)
        .num("shear_modulus_pa", spec.material.shear_modulus)
        .num("fracture_strength_low_pa", spec.material.fracture_strength_range.0)
        .num("fracture_strength_high_pa", spec.material.fracture_strength_range.1);
    for axis in Axis::BOTH {
        let mode = spec.axis(axis);
        let est = lumped_estimate(spec, axis, apply_over_etch);
        r.section(axis.name())
            .num("f0_hz", mode.f0)
            .num("q", mode.q_factor)
            .num("q_mounted", spec.mounted_q(axis))
            .num("inertia_kg_m2", mode.inertia)
            .num("stiffness_n_m_per_rad", mode.stiffness)
            .num("resonant_gain_deg_per_v", mode.resonant_gain)
            .num("sat_angle_deg", mode.sat_angle)
            .num("fea_target_hz", est.fea_target)
            .num("measured_to_fea", est.measured_to_fea())
            .num("lumped_inertia_kg_m2", est.inertia)
            .num("required_stiffness_n_m_per_rad", est.required_stiffness)
            .opt("flexure_stiffness_n_m_per_rad", est.flexure_stiffness)
            .opt("lumped_f0_hz", est.lumped_f0)
            .opt("lumped_to_fea", est.lumped_to_fea());
    }
    r
}

pub struct SweepRun {
    pub response: FrequencyResponse,
    pub report: Report,
    /// Set when no −3 dB summary could be extracted.
    pub warning: Option<String>,
}

fn regime_resonator(spec: &DeviceSpec, axis: Axis, regime: Regime) -> ResonatorParams {
    match regime {
        Regime::Free => spec.resonator(axis),
        Regime::Mounted => spec.mounted_resonator(axis),
    }
}

fn regime_name(regime: Regime) -> &'static str {
    match regime {
        Regime::Free => "free",
        Regime::Mounted => "mounted",
    }
}

pub fn sweep_run(
    spec: &DeviceSpec,
    axis: Axis,
    regime: Regime,
    from_hz: f64,
    to_hz: f64,
    points: usize,
    spacing: Spacing,
) -> Result<SweepRun> {
    let resonator = regime_resonator(spec, axis, regime);
    if !(from_hz <= resonator.f0 && resonator.f0 <= to_hz) {
        bail!(
            "sweep range {from_hz}..{to_hz} Hz does not contain the {axis} f0 of {} Hz",
            resonator.f0
        );
    }
    let response = sweep(&resonator, from_hz, to_hz, points, spacing)?;
    let mut report = Report::new();
    report
        .section("sweep")
        .text("axis", axis.name())
        .text("regime", regime_name(regime))
        .int("points", response.len());
    let warning = match q_from_bandwidth(&response) {
        Ok(est) => {
            report
                .num("f0_hz", est.f0)
                .num("q", est.q_factor)
                .num("bandwidth_hz", est.bandwidth());
            None
        }
        Err(e) => Some(format!("{e}; summary omitted")),
    };
    Ok(SweepRun {
        response,
        report,
        warning,
    })
}

pub struct LissajousRun {
    pub trajectory: Trajectory,
    pub image: GrayImage,
    pub coverage: CoverageReport,
    pub report: Report,
}

pub fn lissajous_run(
    spec: &DeviceSpec,
    duration_s: f64,
    sample_rate_hz: f64,
    grid: Grid,
    raster: Grid,
    vpp: f64,
) -> Result<LissajousRun> {
    let (h, v) = (spec.axis(Axis::Horizontal), spec.axis(Axis::Vertical));
    let config = TrajectoryConfig::new(
        h.f0,
        v.f0,
        h.scan_angle(vpp)?,
        v.scan_angle(vpp)?,
        sample_rate_hz,
        duration_s,
    );
    let trajectory = generate(&config)?;
    let image = render_pattern(&trajectory, raster.cols, raster.rows)?;
    let period = repeat_period(config.f_h, config.f_v, DEFAULT_REPEAT_TOLERANCE);
    let coverage = match coverage(&trajectory, grid.cols, grid.rows) {
        Ok(c) => c,
        // A stationary beam lights exactly one cell.
        Err(TrajectoryError::DegenerateExtent { .. }) => CoverageReport {
            grid_cols: grid.cols,
            grid_rows: grid.rows,
            covered_cells: 1,
            fill_fraction: 1.0 / (grid.cols * grid.rows) as f64,
            repeat_period: None,
            repetition_rate: None,
        },
        Err(e) => return Err(e.into()),
    }
    .with_repeat_period(period);

    let mut report = Report::new();
    report
        .section("lissajous")
        .num("f_h_hz", config.f_h)
        .num("f_v_hz", config.f_v)
        .num("theta_h_deg", config.theta_h)
        .num("theta_v_deg", config.theta_v)
        .num("vpp_v", vpp)
        .num("duration_s", config.duration)
        .num("sample_rate_hz", config.sample_rate)
        .int("samples", trajectory.len())
        .opt("repeat_period_s", coverage.repeat_period)
        .opt("repetition_rate_hz", coverage.repetition_rate)
        .int("grid", grid)
        .int("covered_cells", coverage.covered_cells)
        .num("fill_fraction", coverage.fill_fraction)
        .int("raster_px", raster);
    Ok(LissajousRun {
        trajectory,
        image,
        coverage,
        report,
    })
}

/// `vpps` must be sorted ascending.
pub fn voltage_run(spec: &DeviceSpec, axis: Axis, vpps: &[f64]) -> Result<(Vec<(f64, f64)>, Report)> {
    let mode = spec.axis(axis);
    let resonator = mode.resonator();
    let template = DriveSignal::square(0.0, mode.f0);
    let mut report = Report::new();
    report
        .section("voltage_response")
        .text("axis", axis.name())
        .int("points", vpps.len());
    let Some(sat) = mode.saturation() else {
        report
            .opt("saturation_onset_vpp", None)
            .opt("first_vpp_below_marginal_threshold", None);
        return Ok((vpps.iter().map(|&v| (v, 0.0)).collect(), report));
    };
    let rows = voltage_response_curve(&resonator, &sat, &template, vpps)?;
    let mut flagged = None;
    for &v in vpps {
        if marginal_gain_ratio(&resonator, &template.with_vpp(v), &sat)? < MARGINAL_GAIN_THRESHOLD {
            flagged = Some(v);
            break;
        }
    }
    report
        .num("marginal_gain_threshold", MARGINAL_GAIN_THRESHOLD)
        .num(
            "saturation_onset_vpp",
            saturation_onset_vpp(&resonator, &sat, &template, MARGINAL_GAIN_THRESHOLD),
        )
        .opt("first_vpp_below_marginal_threshold", flagged);
    if let Some(&(v, a)) = rows.last() {
        report.num("max_vpp_v", v).num("angle_at_max_vpp_deg", a);
    }
    Ok((rows, report))
}

pub fn metrics_report(spec: &DeviceSpec, distance_m: f64, vpp: f64) -> Result<Report> {
    let setup = ProjectionSetup {
        screen_distance: distance_m,
        ..ProjectionSetup::default()
    };
    setup.validate()?;
    let mut r = Report::new();
    r.section("metrics").num("screen_distance_m", distance_m).num("vpp_v", vpp);
    for axis in Axis::BOTH {
        let mode = spec.axis(axis);
        let theta = mode.scan_angle(vpp)?;
        let aperture_mm = setup.aperture(axis) * 1e3;
        r.section(axis.name())
            .num("scan_angle_deg", theta)
            .num("f0_khz", mode.f0 / 1e3)
            .num("aperture_mm", aperture_mm)
            .num(
                "bandwidth_efficiency_deg_mm_khz",
                bandwidth_efficiency_product(theta, aperture_mm, mode.f0 / 1e3),
            )
            .num("screen_width_mm", screen_width(theta, distance_m)? * 1e3)
            .int("resolvable_spots", resolvable_spots(theta, &setup, axis)?);
    }
    Ok(r)
}

/// Sweep over `f0 ± half_bandwidths·f0/Q` with both Q estimates.
fn figure_sweep(
    label: &str,
    resonator: &ResonatorParams,
    half_bandwidths: f64,
    points: usize,
    report: &mut Report,
) -> Result<FrequencyResponse> {
    let half = half_bandwidths * resonator.f0 / resonator.q_factor;
    let response = sweep(resonator, resonator.f0 - half, resonator.f0 + half, points, Spacing::Linear)?;
    let est = q_from_bandwidth(&response)?;
    let data = SweepDataset::new(label, response.frequencies().zip(response.amplitudes()).collect())?;
    let fit = fit_lorentzian(&data, None)?;
    report
        .section(label)
        .num("from_hz", resonator.f0 - half)
        .num("to_hz", resonator.f0 + half)
        .int("points", points)
        .num("model_q", resonator.q_factor)
        .num("bandwidth_f0_hz", est.f0)
        .num("bandwidth_q", est.q_factor)
        .num("bandwidth_hz", est.bandwidth())
        .num("fit_f0_hz", fit.params.f0)
        .num("fit_q", fit.params.q_factor)
        .int("fit_iterations", fit.iterations);
    Ok(response)
}

fn reproduce(figure: Figure, spec: &DeviceSpec, dir: &Path, em: &mut Emitter) -> Result<Report> {
    let mut report = Report::new();
    match figure {
        Figure::Fig6e => {
            let run = lissajous_run(
                spec,
                0.040,
                2e6,
                Grid { cols: 64, rows: 64 },
                Grid { cols: 512, rows: 512 },
                12.0,
            )?;
            em.write(&dir.join("fig6e_pattern.pgm"), &run.image.to_pgm())?;
            em.write(
                &dir.join("fig6e_trajectory.csv"),
                io::trajectory_csv(&run.trajectory).as_bytes(),
            )?;
            report.append(&run.report).append(&metrics_report(spec, 0.60, 12.0)?);
            em.write(&dir.join("fig6e_report.txt"), report.as_str().as_bytes())?;
        }
        Figure::Fig7 => {
            for axis in Axis::BOTH {
                let label = format!("{axis}_mounted_sweep");
                let resp = figure_sweep(&label, &spec.mounted_resonator(axis), 6.0, 1201, &mut report)?;
                em.write(&dir.join(format!("fig7_{label}.csv")), io::response_csv(&resp).as_bytes())?;
            }
            em.write(&dir.join("fig7_report.txt"), report.as_str().as_bytes())?;
        }
        Figure::Fig8 => {
            let vpps: Vec<f64> = (0..=18).map(f64::from).collect();
            for axis in Axis::BOTH {
                let (rows, vr) = voltage_run(spec, axis, &vpps)?;
                report.append(&vr);
                em.write(&dir.join(format!("fig8a_{axis}_voltage.csv")), io::voltage_csv(&rows).as_bytes())?;
            }
            for axis in Axis::BOTH {
                let label = format!("{axis}_sweep");
                let resp = figure_sweep(&label, &spec.resonator(axis), 6.0, 4001, &mut report)?;
                em.write(&dir.join(format!("fig8b_{label}.csv")), io::response_csv(&resp).as_bytes())?;
            }
            em.write(&dir.join("fig8_report.txt"), report.as_str().as_bytes())?;
        }
    }
    Ok(report)
}
