//! CSV and JSON file formats.
//!
//! Files are written to a sibling temporary path and renamed into place, so a
//! failed run never leaves a truncated file behind.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::model::ContinuousModel;
use crate::response::FrequencyResponse;
use crate::sampler::{EventRecord, QuantizedTrace};
use crate::{Error, Result};

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp_name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    tmp_name.push(".partial");
    let tmp = PathBuf::from(path).with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    write_atomic(path, &csv_bytes(header, rows)?)
}

fn read_csv(path: &Path, expected: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names != expected {
        return Err(Error::Parse(format!("{}: expected columns {expected:?}, found {names:?}", path.display())));
    }
    Ok(reader.records().collect::<std::result::Result<_, _>>()?)
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    let raw = record.get(i).unwrap_or("");
    raw.parse().map_err(|_| {
        let line = record.position().map_or(0, |p| p.line());
        Error::Parse(format!("{}:{line}: cannot parse {raw:?}", path.display()))
    })
}

pub const TRACE_COLUMNS: [&str; 8] = ["k", "t", "u", "z", "y", "a", "b", "event"];
pub const EVENT_COLUMNS: [&str; 3] = ["l", "t_l", "y_l"];

/// Contents of a trace file: the input, the noiseless output (when known)
/// and the censored trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceFile {
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub trace: QuantizedTrace,
}

pub fn write_trace_csv(path: &Path, u: &[f64], z: &[f64], trace: &QuantizedTrace) -> Result<()> {
    if u.len() != trace.len() || z.len() != trace.len() {
        return Err(Error::Dimension(format!(
            "trace has {} steps, input {}, output {}",
            trace.len(),
            u.len(),
            z.len()
        )));
    }
    let rows = (0..trace.len()).map(|k| {
        vec![
            k.to_string(),
            (k as f64 * trace.delta).to_string(),
            u[k].to_string(),
            z[k].to_string(),
            trace.y[k].to_string(),
            trace.a[k].to_string(),
            trace.b[k].to_string(),
            u8::from(trace.event_flag[k]).to_string(),
        ]
    });
    write_csv(path, &TRACE_COLUMNS, rows)
}

/// Reads a trace file. `tau` is not stored in the file and is passed through.
pub fn read_trace_csv(path: &Path, tau: f64) -> Result<TraceFile> {
    let records = read_csv(path, &TRACE_COLUMNS)?;
    let n = records.len();
    let mut out = TraceFile {
        u: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
        trace: QuantizedTrace {
            y: Vec::with_capacity(n),
            a: Vec::with_capacity(n),
            b: Vec::with_capacity(n),
            event_flag: Vec::with_capacity(n),
            delta: 0.0,
            tau,
        },
    };
    let mut times = Vec::with_capacity(n);
    for (i, r) in records.iter().enumerate() {
        let k: usize = field(r, 0, path)?;
        if k != i {
            return Err(Error::Parse(format!("{}: row {i} has k = {k}", path.display())));
        }
        times.push(field::<f64>(r, 1, path)?);
        out.u.push(field(r, 2, path)?);
        out.z.push(field(r, 3, path)?);
        out.trace.y.push(field(r, 4, path)?);
        let a: f64 = field(r, 5, path)?;
        let b: f64 = field(r, 6, path)?;
        if !(a < b) {
            return Err(Error::Parse(format!("{}: row {i} has empty interval [{a}, {b}]", path.display())));
        }
        out.trace.a.push(a);
        out.trace.b.push(b);
        out.trace.event_flag.push(field::<u8>(r, 7, path)? != 0);
    }
    out.trace.delta = match times.len() {
        0 | 1 => return Err(Error::Parse(format!("{}: need at least two rows", path.display()))),
        len => (times[len - 1] - times[0]) / (len - 1) as f64,
    };
    Ok(out)
}

pub fn write_events_csv(path: &Path, events: &EventRecord) -> Result<()> {
    let rows = events
        .times
        .iter()
        .zip(&events.values)
        .enumerate()
        .map(|(l, (t, y))| vec![(l + 1).to_string(), t.to_string(), y.to_string()]);
    write_csv(path, &EVENT_COLUMNS, rows)
}

/// `(t_l, y_l)` pairs of an event file.
pub fn read_events_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    read_csv(path, &EVENT_COLUMNS)?
        .iter()
        .map(|r| Ok((field(r, 1, path)?, field(r, 2, path)?)))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_model(path: &Path) -> Result<ContinuousModel> {
    let text = fs::read_to_string(path)?;
    let model: ContinuousModel = serde_json::from_str(&text)?;
    model.validate()
}

pub fn write_model(path: &Path, model: &ContinuousModel) -> Result<()> {
    write_json(path, model)
}

pub fn write_frequency_response_csv(path: &Path, response: &FrequencyResponse) -> Result<()> {
    let phase = response.unwrapped_phase_deg();
    let rows = response
        .points
        .iter()
        .zip(phase)
        .map(|(p, ph)| vec![p.omega.to_string(), p.magnitude_db().to_string(), ph.to_string()]);
    write_csv(path, &["omega", "mag_db", "phase_deg"], rows)
}
