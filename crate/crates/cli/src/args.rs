//! Command-line grammar. Numeric flags carry their unit in the name.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mirrorscan::device::Axis;

#[derive(Debug, Parser)]
#[command(name = "mirrorscan", version)]
#[command(about = "Dynamics, scan patterns and calibration for dual-axis resonant MEMS mirrors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct DeviceArg {
    /// Device spec file. The built-in default device is used when omitted.
    #[arg(long, value_name = "PATH")]
    pub device: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Regime {
    /// Free-standing Q (optical setup).
    Free,
    /// Q measured with the die taped to the piezo disc.
    Mounted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpacingArg {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    /// Lissajous pattern and projected scan widths.
    Fig6e,
    /// Mounted-fixture resonance sweeps.
    Fig7,
    /// Voltage response and free resonance sweeps.
    Fig8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub cols: usize,
    pub rows: usize,
}

impl std::fmt::Display for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.cols, self.rows)
    }
}

pub fn parse_grid(s: &str) -> Result<Grid, String> {
    let (c, r) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected COLSxROWS, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    let grid = Grid {
        cols: parse(c)?,
        rows: parse(r)?,
    };
    if grid.cols == 0 || grid.rows == 0 {
        return Err("grid dimensions must be at least 1".into());
    }
    Ok(grid)
}

pub fn parse_axis(s: &str) -> Result<Axis, String> {
    s.parse::<Axis>().map_err(|e| e.to_string())
}

/// One voltage, or an inclusive range `START:STOP:STEP`.
pub fn parse_vpp(s: &str) -> Result<Vec<f64>, String> {
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite() && *x >= 0.0)
            .ok_or_else(|| format!("`{v}` is not a non-negative voltage"))
    };
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [v] => Ok(vec![num(v)?]),
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if step <= 0.0 || stop < start {
                return Err(format!("range `{s}` needs STEP > 0 and STOP >= START"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            if n > 100_000 {
                return Err(format!("range `{s}` has too many points"));
            }
            Ok((0..=n).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(format!("expected V or START:STOP:STEP, got `{s}`")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Geometry, lumped estimates and stored targets.
    DeviceInfo {
        #[command(flatten)]
        device: DeviceArg,
        /// Thin the flexures by the recorded over-etch.
        #[arg(long)]
        apply_over_etch: bool,
        /// Also write the report to this file.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },

    /// Frequency response of one axis, with a -3 dB Q summary.
    Sweep {
        #[command(flatten)]
        device: DeviceArg,
        #[arg(long, value_parser = parse_axis)]
        axis: Axis,
        #[arg(long)]
        from_hz: f64,
        #[arg(long)]
        to_hz: f64,
        #[arg(long)]
        points: usize,
        #[arg(long, value_enum, default_value_t = Regime::Free)]
        regime: Regime,
        #[arg(long, value_enum, default_value_t = SpacingArg::Linear)]
        spacing: SpacingArg,
        /// Response CSV.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },

    /// Two-axis scan pattern: PGM raster, trajectory CSV, repeat period and coverage.
    Lissajous {
        #[command(flatten)]
        device: DeviceArg,
        #[arg(long, default_value_t = 40.0)]
        duration_ms: f64,
        #[arg(long, default_value_t = 2e6)]
        sample_rate_hz: f64,
        /// Coverage grid.
        #[arg(long, value_parser = parse_grid, default_value = "64x64")]
        grid: Grid,
        /// Raster size in pixels.
        #[arg(long, value_parser = parse_grid, default_value = "512x512")]
        raster_px: Grid,
        /// Drive level on both axes.
        #[arg(long, default_value_t = 12.0)]
        vpp: f64,
        /// PGM path; the trajectory CSV is written beside it with a `.csv` extension.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },

    /// Optical angle against drive level at resonance.
    VoltageResponse {
        #[command(flatten)]
        device: DeviceArg,
        #[arg(long, value_parser = parse_axis)]
        axis: Axis,
        /// Drive level (V peak-to-peak) or inclusive range START:STOP:STEP. Repeatable.
        #[arg(long, value_parser = parse_vpp, value_name = "V|START:STOP:STEP")]
        vpp: Vec<Vec<f64>>,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },

    /// Bandwidth-efficiency products, screen widths and resolvable spots.
    Metrics {
        #[command(flatten)]
        device: DeviceArg,
        #[arg(long, default_value_t = 0.60)]
        distance_m: f64,
        #[arg(long, default_value_t = 12.0)]
        vpp: f64,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },

    /// Fit resonance and saturation data and write an updated spec.
    Calibrate {
        #[command(flatten)]
        device: DeviceArg,
        /// Response CSV of the free vertical resonance.
        #[arg(long, value_name = "PATH")]
        vertical_sweep: Option<PathBuf>,
        /// Response CSV of the vertical resonance in the mounted fixture.
        #[arg(long, value_name = "PATH")]
        vertical_mounted_sweep: Option<PathBuf>,
        /// Voltage-response CSV of the vertical axis.
        #[arg(long, value_name = "PATH")]
        vertical_voltage: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        horizontal_sweep: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        horizontal_mounted_sweep: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        horizontal_voltage: Option<PathBuf>,
        /// Updated spec file.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },

    /// Synthetic calibration datasets generated from a spec.
    SynthData {
        #[command(flatten)]
        device: DeviceArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multiplicative Gaussian noise, percent of each value.
        #[arg(long, default_value_t = 0.0)]
        noise_pct: f64,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },

    /// Regenerate the data behind one characterization figure.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
        #[command(flatten)]
        device: DeviceArg,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("64x32").unwrap(), Grid { cols: 64, rows: 32 });
        assert!(parse_grid("0x4").is_err());
        assert!(parse_grid("64").is_err());
    }

    #[test]
    fn voltages() {
        assert_eq!(parse_vpp("12").unwrap(), vec![12.0]);
        assert_eq!(parse_vpp("0:3:1").unwrap(), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(parse_vpp("0:1:0.25").unwrap().len(), 5);
        assert!(parse_vpp("-1").is_err());
        assert!(parse_vpp("3:0:1").is_err());
        assert!(parse_vpp("0:1").is_err());
    }

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
