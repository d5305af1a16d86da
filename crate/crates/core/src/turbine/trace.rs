//! Labeled sensor traces and their on-disk format.
//!
//! One file per run: a single JSON header line (run id, label, sample rate,
//! channel names and units, wind seed, scenario) terminated by `\n`,
//! followed by a row-major little-endian f64 block of shape rows × 5.
//! A corpus manifest (`manifest.json`) lists every run with its label,
//! seed, and file path plus the config hash that produced it.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{FaultKind, FaultScenario, CHANNEL_NAMES, CHANNEL_UNITS, N_CHANNELS};

/// One simulation run: five sensor channels sampled at 80 Hz, one label.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrace {
    pub run_id: String,
    pub kind: FaultKind,
    /// Samples per second.
    pub sample_rate: f64,
    /// Row-major T×5 matrix in [`CHANNEL_NAMES`] order.
    pub values: Array2<f64>,
    pub wind_seed: u64,
    pub scenario: FaultScenario,
}

impl SensorTrace {
    /// Class label 0..=7.
    pub fn label(&self) -> u8 {
        self.kind.label()
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceHeader {
    run_id: String,
    label: u8,
    kind: FaultKind,
    sample_rate: f64,
    channels: Vec<String>,
    units: Vec<String>,
    rows: usize,
    wind_seed: u64,
    scenario: FaultScenario,
}

/// Write a trace to `path` in the header-line + f64-block format.
pub fn write_trace(trace: &SensorTrace, path: &Path) -> Result<()> {
    let header = TraceHeader {
        run_id: trace.run_id.clone(),
        label: trace.label(),
        kind: trace.kind,
        sample_rate: trace.sample_rate,
        channels: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        units: CHANNEL_UNITS.iter().map(|s| s.to_string()).collect(),
        rows: trace.rows(),
        wind_seed: trace.wind_seed,
        scenario: trace.scenario.clone(),
    };
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    serde_json::to_writer(&mut file, &header)
        .map_err(|e| Error::CorruptArtifact { path: path.display().to_string(), detail: e.to_string() })?;
    file.write_all(b"\n").map_err(io_err)?;
    let mut buf = Vec::with_capacity(trace.values.len() * 8);
    for v in trace.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf).map_err(io_err)?;
    file.flush().map_err(io_err)?;
    Ok(())
}

/// Read a trace written by [`write_trace`].
pub fn read_trace(path: &Path) -> Result<SensorTrace> {
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let corrupt = |detail: String| Error::CorruptArtifact {
        path: path.display().to_string(),
        detail,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path).map_err(io_err)?.read_to_end(&mut bytes).map_err(io_err)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("missing header line".into()))?;
    let header: TraceHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| corrupt(format!("bad header: {e}")))?;
    let body = &bytes[newline + 1..];
    let expected = header.rows * N_CHANNELS * 8;
    if body.len() != expected {
        return Err(corrupt(format!(
            "body is {} bytes, expected {expected} for {} rows",
            body.len(),
            header.rows
        )));
    }
    let mut values = Vec::with_capacity(header.rows * N_CHANNELS);
    for chunk in body.chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let values = Array2::from_shape_vec((header.rows, N_CHANNELS), values)
        .map_err(|e| corrupt(e.to_string()))?;
    Ok(SensorTrace {
        run_id: header.run_id,
        kind: header.kind,
        sample_rate: header.sample_rate,
        values,
        wind_seed: header.wind_seed,
        scenario: header.scenario,
    })
}

/// One corpus entry: where a run lives and what it is.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunEntry {
    pub run_id: String,
    /// Path relative to the manifest's directory.
    pub path: String,
    pub label: u8,
    pub kind: FaultKind,
    pub wind_seed: u64,
    pub rows: usize,
}

/// Lists every run of a simulated corpus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusManifest {
    pub runs: Vec<RunEntry>,
    pub sample_rate: f64,
    pub duration_s: f64,
    /// Hash of the simulator config block that produced the corpus.
    pub config_hash: String,
}

impl CorpusManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::CorruptArtifact {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    /// Absolute path of a run's trace file given the manifest's location.
    pub fn trace_path(&self, manifest_path: &Path, entry: &RunEntry) -> PathBuf {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&entry.path)
    }

    /// Runs per label, index 0..=7.
    pub fn class_histogram(&self) -> [usize; 8] {
        let mut hist = [0usize; 8];
        for run in &self.runs {
            hist[run.label as usize] += 1;
        }
        hist
    }
}
