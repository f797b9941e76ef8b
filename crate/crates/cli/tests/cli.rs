use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mirrorscan::device::DeviceSpec;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mirrorscan"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Value of `key` inside report section `section`.
fn field(report: &str, section: &str, key: &str) -> String {
    let mut in_section = false;
    for line in report.lines() {
        if !line.starts_with(' ') {
            in_section = line == section;
        } else if in_section {
            if let Some(v) = line.trim().strip_prefix(&format!("{key}: ")) {
                return v.to_string();
            }
        }
    }
    panic!("no {section}.{key} in\n{report}");
}

fn num(report: &str, section: &str, key: &str) -> f64 {
    field(report, section, key).parse().unwrap()
}

fn with_zero_gain(dir: &Path) -> String {
    let text: String = DeviceSpec::default()
        .to_canonical_text()
        .lines()
        .map(|l| {
            if l.starts_with("resonant_gain_deg_per_v") {
                "resonant_gain_deg_per_v = 0\n".to_string()
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    let path = dir.join("still.spec");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn device_info_reports_targets_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(dir.path(), &["device-info", "--out", "info.txt"]);
    assert_eq!(num(&a, "horizontal", "f0_hz"), 54175.0);
    assert_eq!(num(&a, "horizontal", "fea_target_hz"), 54504.0);
    let ratio = num(&a, "horizontal", "lumped_to_fea");
    assert!(ratio > 1.0 / 3.0 && ratio < 3.0, "{ratio}");
    assert_eq!(field(&a, "vertical", "lumped_f0_hz"), "none");
    let first = fs::read(dir.path().join("info.txt")).unwrap();
    let manifest = fs::read(dir.path().join("info.txt.manifest.json")).unwrap();
    let b = ok(dir.path(), &["device-info", "--out", "info.txt"]);
    assert_eq!(a, b);
    assert_eq!(first, fs::read(dir.path().join("info.txt")).unwrap());
    assert_eq!(manifest, fs::read(dir.path().join("info.txt.manifest.json")).unwrap());
    assert_eq!(first, a.as_bytes());
}

#[test]
fn invalid_geometry_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = DeviceSpec::default()
        .to_canonical_text()
        .replace("inner_flexure_width_um = 270", "inner_flexure_width_um = 0");
    fs::write(dir.path().join("bad.spec"), text).unwrap();
    let out = run(dir.path(), &["device-info", "--device", "bad.spec"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("inner_flexure_width"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn sweep_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok(
        dir.path(),
        &["sweep", "--axis", "vertical", "--from-hz", "3560", "--to-hz", "3640", "--points", "8001", "--out", "v.csv"],
    );
    assert!((num(&v, "sweep", "q") - 750.0).abs() < 7.5);
    let h = ok(
        dir.path(),
        &["sweep", "--axis", "horizontal", "--from-hz", "53900", "--to-hz", "54450", "--points", "5501", "--out", "h.csv"],
    );
    assert!((num(&h, "sweep", "f0_hz") - 54175.0).abs() < 0.5);
    let csv = fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert!(csv.starts_with("frequency_hz,amplitude,phase_deg\n"));
    assert_eq!(csv.lines().count(), 5502);
    assert_eq!(verify_manifest_in(dir.path(), "h.csv.manifest.json"), 1);
}

#[test]
fn two_point_sweep_warns_but_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["sweep", "--axis", "vertical", "--from-hz", "3560", "--to-hz", "3640", "--points", "2", "--out", "n2.csv"],
    );
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("warning:"), "{stderr}");
    assert!(!stdout.contains("  q:"));
    assert_eq!(fs::read_to_string(dir.path().join("n2.csv")).unwrap().lines().count(), 3);
}

#[test]
fn sweep_range_must_contain_f0() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["sweep", "--axis", "vertical", "--from-hz", "100", "--to-hz", "200", "--points", "10", "--out", "x.csv"],
    );
    assert!(!out.status.success());
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn mounted_regime_uses_mounted_q() {
    let dir = tempfile::tempdir().unwrap();
    let r = ok(
        dir.path(),
        &[
            "sweep", "--axis", "vertical", "--regime", "mounted", "--from-hz", "3540", "--to-hz", "3660", "--points",
            "1201", "--out", "m.csv",
        ],
    );
    assert!((num(&r, "sweep", "q") / 300.56 - 1.0).abs() < 0.01);
}

#[test]
fn lissajous_default_period_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(dir.path(), &["lissajous", "--out", "p.pgm"]);
    assert!((num(&a, "lissajous", "repeat_period_s") - 0.040).abs() < 1e-12);
    assert_eq!(field(&a, "lissajous", "grid"), "64x64");
    let pgm = fs::read(dir.path().join("p.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n512 512\n255\n"));
    let csv = fs::read(dir.path().join("p.csv")).unwrap();
    let manifest = fs::read(dir.path().join("p.pgm.manifest.json")).unwrap();
    let m = verify_manifest_in(dir.path(), "p.pgm.manifest.json");
    assert_eq!(m, 2);
    let b = ok(dir.path(), &["lissajous", "--out", "p.pgm"]);
    assert_eq!(a, b);
    assert_eq!(pgm, fs::read(dir.path().join("p.pgm")).unwrap());
    assert_eq!(csv, fs::read(dir.path().join("p.csv")).unwrap());
    assert_eq!(manifest, fs::read(dir.path().join("p.pgm.manifest.json")).unwrap());
}

/// Verifies a manifest whose paths are relative to `dir`; returns the output count.
fn verify_manifest_in(dir: &Path, name: &str) -> usize {
    let text = fs::read_to_string(dir.join(name)).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    let outputs = m["outputs"].as_array().unwrap();
    for o in outputs {
        let bytes = fs::read(dir.join(o["path"].as_str().unwrap())).unwrap();
        assert_eq!(mirrorscan_cli::output::sha256_hex(&bytes), o["sha256"].as_str().unwrap());
    }
    assert!(m["command_line"].as_array().unwrap().len() > 1);
    outputs.len()
}

#[test]
fn zero_amplitude_lights_one_block() {
    let dir = tempfile::tempdir().unwrap();
    let spec = with_zero_gain(dir.path());
    let r = ok(dir.path(), &["lissajous", "--device", &spec, "--duration-ms", "1", "--out", "z.pgm"]);
    assert_eq!(num(&r, "lissajous", "covered_cells"), 1.0);
    assert!((num(&r, "lissajous", "fill_fraction") - 1.0 / 4096.0).abs() < 1e-9);
    let pgm = fs::read(dir.path().join("z.pgm")).unwrap();
    let pixels = &pgm[pgm.len() - 512 * 512..];
    assert_eq!(pixels.iter().filter(|&&p| p > 0).count(), 1);
}

#[test]
fn voltage_response_examples() {
    let dir = tempfile::tempdir().unwrap();
    let h = ok(dir.path(), &["voltage-response", "--axis", "horizontal", "--vpp", "0:18:1", "--out", "h.csv"]);
    assert!(num(&h, "voltage_response", "first_vpp_below_marginal_threshold") <= 12.0);
    let rows: Vec<(f64, f64)> = fs::read_to_string(dir.path().join("h.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (v, a) = l.split_once(',').unwrap();
            (v.parse().unwrap(), a.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 19);
    assert!(rows.windows(2).all(|w| w[1].1 > w[0].1));

    ok(dir.path(), &["voltage-response", "--axis", "vertical", "--vpp", "12", "--out", "v.csv"]);
    let v = fs::read_to_string(dir.path().join("v.csv")).unwrap();
    let angle: f64 = v.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((angle - 4.8).abs() < 0.01);

    ok(dir.path(), &["voltage-response", "--axis", "vertical", "--out", "e.csv"]);
    assert_eq!(fs::read_to_string(dir.path().join("e.csv")).unwrap(), "vpp_v,optical_angle_deg\n");
}

#[test]
fn repeated_vpp_flags_are_merged_in_order() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["voltage-response", "--axis", "vertical", "--vpp", "12", "--vpp", "0:4:2", "--out", "m.csv"],
    );
    let text = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let vs: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(vs, ["0", "2", "4", "12"]);
}

#[test]
fn metrics_values() {
    let dir = tempfile::tempdir().unwrap();
    let r = ok(dir.path(), &["metrics"]);
    let v = num(&r, "vertical", "bandwidth_efficiency_deg_mm_khz");
    let h = num(&r, "horizontal", "bandwidth_efficiency_deg_mm_khz");
    assert!((v / 24.19 - 1.0).abs() < 0.005, "{v}");
    assert!((h / 623.0 - 1.0).abs() < 0.005, "{h}");
    assert!((num(&r, "horizontal", "screen_width_mm") - 120.8).abs() < 0.5);
    assert!((num(&r, "vertical", "screen_width_mm") - 50.3).abs() < 0.5);

    let spec = with_zero_gain(dir.path());
    let z = ok(dir.path(), &["metrics", "--device", &spec]);
    for axis in ["vertical", "horizontal"] {
        for key in ["scan_angle_deg", "bandwidth_efficiency_deg_mm_khz", "screen_width_mm", "resolvable_spots"] {
            assert_eq!(num(&z, axis, key), 0.0, "{axis}.{key}");
        }
    }
}

fn calibrate_args<'a>(dir: &'a str, axes: &[&str], out: &'a str) -> Vec<String> {
    let mut args = vec!["calibrate".to_string()];
    for axis in axes {
        for kind in ["sweep", "mounted_sweep", "voltage"] {
            args.push(format!("--{axis}-{}", kind.replace('_', "-")));
            args.push(format!("{dir}/{axis}_{kind}.csv"));
        }
    }
    args.extend(["--out".to_string(), out.to_string()]);
    args
}

fn fitted_fields(spec: &DeviceSpec) -> Vec<f64> {
    let mut v = Vec::new();
    for a in [&spec.vertical, &spec.horizontal] {
        v.extend([a.f0, a.q_factor, a.resonant_gain, a.sat_angle]);
    }
    v.extend([spec.measured_qs_mounted.0, spec.measured_qs_mounted.1]);
    v
}

fn closed_loop(noise_pct: &str, seed: &str, tol: f64) {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth-data", "--noise-pct", noise_pct, "--seed", seed, "--out", "data"]);
    assert_eq!(verify_manifest_in(dir.path(), "data/manifest.json"), 6);
    let args = calibrate_args("data", &["vertical", "horizontal"], "cal.spec");
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let report = ok(dir.path(), &args);
    assert_eq!(report.lines().filter(|l| l.contains("->")).count(), 10);
    let fitted = DeviceSpec::load(&dir.path().join("cal.spec")).unwrap();
    for (got, want) in fitted_fields(&fitted).iter().zip(fitted_fields(&DeviceSpec::default())) {
        assert!((got / want - 1.0).abs() < tol, "{got} vs {want}");
    }
}

#[test]
fn calibrate_closed_loop_noiseless() {
    closed_loop("0", "0", 0.005);
}

#[test]
fn calibrate_closed_loop_one_percent_noise() {
    closed_loop("1", "7", 0.02);
}

#[test]
fn calibrate_missing_file_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["calibrate", "--vertical-sweep", "absent.csv", "--out", "x.spec"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
    assert!(!dir.path().join("x.spec").exists());
}

#[test]
fn calibrate_without_data_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!run(dir.path(), &["calibrate", "--out", "x.spec"]).status.success());
}

#[test]
fn vertical_only_calibration_leaves_horizontal_section() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth-data", "--noise-pct", "1", "--seed", "3", "--out", "data"]);
    let args = calibrate_args("data", &["vertical"], "cal.spec");
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(dir.path(), &args);
    let section = |text: &str| -> String {
        let start = text.find("[horizontal]").unwrap();
        let rest = &text[start..];
        let end = rest[1..].find("\n[").map_or(rest.len(), |i| i + 2);
        rest[..end].to_string()
    };
    let emitted = fs::read_to_string(dir.path().join("cal.spec")).unwrap();
    let original = DeviceSpec::default().to_canonical_text();
    assert_eq!(section(&emitted), section(&original));
    assert_ne!(emitted, original);
}

#[test]
fn calibrate_error_carries_axis_label() {
    let dir = tempfile::tempdir().unwrap();
    // monotone data: peak on the boundary
    let mut text = String::from("frequency_hz,amplitude,phase_deg\n");
    for i in 0..20 {
        text.push_str(&format!("{},{},0\n", 54000 + i, i + 1));
    }
    fs::write(dir.path().join("mono.csv"), text).unwrap();
    let out = run(dir.path(), &["calibrate", "--horizontal-sweep", "mono.csv", "--out", "x.spec"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizontal"));
}

#[test]
fn reproduce_figures_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for fig in ["fig6e", "fig7", "fig8"] {
        let out_dir = format!("out_{fig}");
        let a = ok(dir.path(), &["reproduce", fig, "--out", &out_dir]);
        let n = verify_manifest_in(dir.path(), &format!("{out_dir}/manifest.json"));
        assert!(n >= 3, "{fig}: {n}");
        let snapshot: Vec<(String, Vec<u8>)> = {
            let mut v: Vec<_> = fs::read_dir(dir.path().join(&out_dir))
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
                })
                .collect();
            v.sort();
            v
        };
        let b = ok(dir.path(), &["reproduce", fig, "--out", &out_dir]);
        assert_eq!(a, b);
        for (name, bytes) in snapshot {
            assert_eq!(bytes, fs::read(dir.path().join(&out_dir).join(&name)).unwrap(), "{fig}/{name}");
        }
    }
}

#[test]
fn fig7_recovers_mounted_q() {
    let dir = tempfile::tempdir().unwrap();
    let r = ok(dir.path(), &["reproduce", "fig7", "--out", "f"]);
    for (section, q) in [("vertical_mounted_sweep", 300.56), ("horizontal_mounted_sweep", 642.76)] {
        assert!((num(&r, section, "bandwidth_q") / q - 1.0).abs() < 0.01);
        assert!((num(&r, section, "fit_q") / q - 1.0).abs() < 0.001);
    }
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!run(dir.path(), &["no-such-command"]).status.success());
    assert!(!run(dir.path(), &["sweep", "--axis", "diagonal"]).status.success());
    assert!(!run(dir.path(), &["lissajous", "--grid", "0x4", "--out", "p.pgm"]).status.success());
    assert!(run(dir.path(), &["--help"]).status.success());
}
