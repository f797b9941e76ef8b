//! CSV encodings of responses, traces, voltage curves and trajectories.
//!
//! Writers emit up to 9 significant digits and `\n` line endings. Readers
//! locate columns by header name and ignore extra columns.

use std::io::Read;

use thiserror::Error;

use crate::calibrate::{CalibrateError, SweepDataset, VoltageDataset};
use crate::numfmt::fmt_sig;
use crate::resonator::{FrequencyResponse, TimeTrace};
use crate::trajectory::Trajectory;

pub const RESPONSE_HEADER: [&str; 3] = ["frequency_hz", "amplitude", "phase_deg"];
pub const TRACE_HEADER: [&str; 3] = ["t_s", "angle_rad", "omega_rad_s"];
pub const VOLTAGE_HEADER: [&str; 2] = ["vpp_v", "optical_angle_deg"];
pub const TRAJECTORY_HEADER: [&str; 3] = ["t_s", "x_deg", "y_deg"];

const DIGITS: usize = 9;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("line {line}: `{value}` is not a number")]
    BadNumber { line: u64, value: String },
    #[error(transparent)]
    Dataset(#[from] CalibrateError),
}

pub type Result<T> = std::result::Result<T, CsvError>;

fn write_rows<const N: usize>(header: [&str; N], rows: impl Iterator<Item = [f64; N]>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row.map(|v| fmt_sig(v, DIGITS))).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

pub fn response_csv(response: &FrequencyResponse) -> String {
    write_rows(
        RESPONSE_HEADER,
        response.samples().iter().map(|s| [s.frequency, s.amplitude, s.phase_deg]),
    )
}

pub fn trace_csv(trace: &TimeTrace) -> String {
    write_rows(
        TRACE_HEADER,
        trace.samples.iter().enumerate().map(|(i, &(a, w))| [trace.time(i), a, w]),
    )
}

pub fn voltage_csv(rows: &[(f64, f64)]) -> String {
    write_rows(VOLTAGE_HEADER, rows.iter().map(|&(v, a)| [v, a]))
}

pub fn trajectory_csv(trajectory: &Trajectory) -> String {
    write_rows(
        TRAJECTORY_HEADER,
        trajectory
            .points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| [trajectory.time(i), x, y]),
    )
}

/// Reads the named columns from CSV text.
fn read_columns<R: Read, const N: usize>(input: R, names: [&'static str; N]) -> Result<Vec<[f64; N]>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let mut idx = [0usize; N];
    for (slot, name) in idx.iter_mut().zip(names) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or(CsvError::MissingColumn(name))?;
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let mut row = [0.0; N];
        for (out, &i) in row.iter_mut().zip(&idx) {
            let raw = record.get(i).unwrap_or("");
            *out = raw.parse().map_err(|_| CsvError::BadNumber {
                line,
                value: raw.to_string(),
            })?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Frequency/amplitude columns of a response CSV as a fit dataset.
pub fn read_sweep_dataset<R: Read>(input: R, label: &str) -> Result<SweepDataset> {
    let rows = read_columns(input, ["frequency_hz", "amplitude"])?;
    Ok(SweepDataset::new(label, rows.into_iter().map(|[f, a]| (f, a)).collect())?)
}

pub fn read_voltage_dataset<R: Read>(input: R, label: &str) -> Result<VoltageDataset> {
    let rows = read_columns(input, VOLTAGE_HEADER)?;
    Ok(VoltageDataset::new(label, rows.into_iter().map(|[v, a]| (v, a)).collect())?)
}

/// Response CSV for a fit dataset; phase is written as 0.
pub fn sweep_dataset_csv(data: &SweepDataset) -> String {
    write_rows(RESPONSE_HEADER, data.rows().iter().map(|&(f, a)| [f, a, 0.0]))
}

pub fn voltage_dataset_csv(data: &VoltageDataset) -> String {
    voltage_csv(data.rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resonator::{sweep, ResonatorParams, Spacing};

    #[test]
    fn response_round_trip() {
        let r = ResonatorParams::new(3600.0, 750.0).unwrap();
        let resp = sweep(&r, 3560.0, 3640.0, 81, Spacing::Linear).unwrap();
        let text = response_csv(&resp);
        assert!(text.starts_with("frequency_hz,amplitude,phase_deg\n"));
        assert_eq!(text.lines().count(), 82);
        let data = read_sweep_dataset(text.as_bytes(), "x").unwrap();
        for (s, &(f, a)) in resp.samples().iter().zip(data.rows()) {
            assert!((s.frequency - f).abs() <= 1e-8 * f);
            assert!((s.amplitude - a).abs() <= 1e-8 * a);
        }
    }

    #[test]
    fn empty_voltage_curve_is_header_only() {
        assert_eq!(voltage_csv(&[]), "vpp_v,optical_angle_deg\n");
    }

    #[test]
    fn voltage_reader_checks_columns() {
        let text = "vpp_v,optical_angle_deg\n0,0\n6,5.5\n12,11.5\n18,11.9\n";
        let d = read_voltage_dataset(text.as_bytes(), "v").unwrap();
        assert_eq!(d.rows()[2], (12.0, 11.5));
        assert!(matches!(
            read_voltage_dataset("vpp,deg\n1,2\n".as_bytes(), "v"),
            Err(CsvError::MissingColumn("vpp_v"))
        ));
        assert!(matches!(
            read_voltage_dataset("vpp_v,optical_angle_deg\n1,x\n".as_bytes(), "v"),
            Err(CsvError::BadNumber { line: 2, .. })
        ));
        assert!(matches!(
            read_voltage_dataset("vpp_v,optical_angle_deg\n1,1\n".as_bytes(), "v"),
            Err(CsvError::Dataset(_))
        ));
    }

    #[test]
    fn trace_and_trajectory_headers() {
        let trace = TimeTrace {
            dt: 0.5,
            samples: vec![(0.0, 1.0), (0.25, -1.0)],
        };
        assert_eq!(trace_csv(&trace), "t_s,angle_rad,omega_rad_s\n0,0,1\n0.5,0.25,-1\n");
        let tr = Trajectory::from_points(0.1, 1.0, 1.0, vec![(0.5, -0.5)]);
        assert_eq!(trajectory_csv(&tr), "t_s,x_deg,y_deg\n0,0.5,-0.5\n");
    }
}
