//! Corpus assembly from simulated traces, and dataset persistence.
//!
//! On disk a dataset is a directory holding `windows.bin` — the raw f32
//! window tensor, row-major little-endian — and `dataset.json`, a sidecar
//! with shapes, label map, run table, fold plan, optional normalization
//! stats, the producing config's hash, and a SHA-256 of the tensor bytes.
//! Loads verify the checksum, so silent truncation or bit rot surfaces as
//! [`Error::CorruptArtifact`] instead of quietly skewed metrics.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::sha256_hex;
use crate::error::{Error, Result};
use crate::turbine::{read_trace, CorpusManifest, FaultKind, CHANNEL_NAMES, N_CHANNELS};

use super::{slide_windows, window_count, FoldPlan, NormStats, RunMeta, WindowSet};

/// Assemble a [`WindowSet`] from every run listed in `manifest`.
///
/// `manifest_path` anchors the manifest's relative trace paths. Runs keep
/// manifest order, so the window tensor is reproducible for a fixed corpus.
pub fn build_corpus(
    manifest: &CorpusManifest,
    manifest_path: &Path,
    window_length: usize,
    stride: usize,
) -> Result<WindowSet> {
    if manifest.runs.is_empty() {
        return Err(Error::invalid("corpus manifest lists no runs"));
    }
    let total: usize = manifest
        .runs
        .iter()
        .map(|e| window_count(e.rows, window_length, stride))
        .sum();
    let mut windows = Array3::zeros((total, window_length, N_CHANNELS));
    let mut labels = Vec::with_capacity(total);
    let mut group = Vec::with_capacity(total);
    let mut runs = Vec::with_capacity(manifest.runs.len());
    let mut next = 0usize;
    for entry in &manifest.runs {
        let path = manifest.trace_path(manifest_path, entry);
        if !path.exists() {
            return Err(Error::MissingTrace {
                run_id: entry.run_id.clone(),
                path: path.display().to_string(),
            });
        }
        let trace = read_trace(&path)?;
        if trace.rows() != entry.rows {
            return Err(Error::CorruptArtifact {
                path: path.display().to_string(),
                detail: format!(
                    "manifest says {} rows, trace holds {}",
                    entry.rows,
                    trace.rows()
                ),
            });
        }
        if trace.label() != entry.label {
            return Err(Error::CorruptArtifact {
                path: path.display().to_string(),
                detail: format!(
                    "manifest labels run {} as {}, trace says {}",
                    entry.run_id,
                    entry.label,
                    trace.label()
                ),
            });
        }
        let run_windows = slide_windows(&trace, window_length, stride)?;
        let n = run_windows.dim().0;
        windows
            .slice_mut(ndarray::s![next..next + n, .., ..])
            .assign(&run_windows);
        labels.extend(std::iter::repeat(entry.label).take(n));
        group.extend(std::iter::repeat(runs.len() as u32).take(n));
        runs.push(RunMeta {
            run_id: entry.run_id.clone(),
            class: entry.label,
        });
        next += n;
    }
    let ws = WindowSet {
        windows,
        labels,
        group,
        runs,
        window_length,
        stride,
        norm: None,
    };
    ws.validate()?;
    Ok(ws)
}

/// Everything about a dataset except the window tensor itself.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetSidecar {
    n_windows: usize,
    window_length: usize,
    stride: usize,
    channels: Vec<String>,
    /// Class index → name, index 0..=7.
    class_names: Vec<String>,
    labels: Vec<u8>,
    group: Vec<u32>,
    runs: Vec<RunMeta>,
    norm: Option<NormStats>,
    fold_plan: FoldPlan,
    config_hash: String,
    windows_sha256: String,
}

/// Persist `ws` and its fold plan under `dir` (created if absent).
pub fn save_dataset(
    ws: &WindowSet,
    plan: &FoldPlan,
    config_hash: &str,
    dir: &Path,
) -> Result<()> {
    ws.validate()?;
    plan.validate(&ws.runs)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let bin_path = dir.join("windows.bin");
    let file = std::fs::File::create(&bin_path)
        .map_err(|e| Error::io(bin_path.display().to_string(), e))?;
    let mut writer = BufWriter::new(file);
    let mut hasher = Sha256::new();
    let mut buf = Vec::with_capacity(ws.window_length * N_CHANNELS * 4);
    for window in ws.windows.outer_iter() {
        buf.clear();
        for &v in window.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        hasher.update(&buf);
        writer
            .write_all(&buf)
            .map_err(|e| Error::io(bin_path.display().to_string(), e))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(bin_path.display().to_string(), e))?;
    let windows_sha256 = format!("{:x}", hasher.finalize());
    let sidecar = DatasetSidecar {
        n_windows: ws.len(),
        window_length: ws.window_length,
        stride: ws.stride,
        channels: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        class_names: FaultKind::ALL.iter().map(|k| k.as_str().to_string()).collect(),
        labels: ws.labels.clone(),
        group: ws.group.clone(),
        runs: ws.runs.clone(),
        norm: ws.norm.clone(),
        fold_plan: plan.clone(),
        config_hash: config_hash.to_string(),
        windows_sha256,
    };
    let json_path = dir.join("dataset.json");
    let text = serde_json::to_string(&sidecar).expect("sidecar serializes");
    std::fs::write(&json_path, text).map_err(|e| Error::io(json_path.display().to_string(), e))
}

/// Load a dataset saved by [`save_dataset`], verifying the tensor checksum.
pub fn load_dataset(dir: &Path) -> Result<(WindowSet, FoldPlan, String)> {
    let json_path = dir.join("dataset.json");
    let text = std::fs::read_to_string(&json_path)
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    let sidecar: DatasetSidecar =
        serde_json::from_str(&text).map_err(|e| Error::CorruptArtifact {
            path: json_path.display().to_string(),
            detail: e.to_string(),
        })?;
    let bin_path = dir.join("windows.bin");
    let expected_bytes = sidecar.n_windows * sidecar.window_length * N_CHANNELS * 4;
    let file = std::fs::File::open(&bin_path)
        .map_err(|e| Error::io(bin_path.display().to_string(), e))?;
    let actual_bytes = file
        .metadata()
        .map_err(|e| Error::io(bin_path.display().to_string(), e))?
        .len();
    if actual_bytes != expected_bytes as u64 {
        return Err(Error::CorruptArtifact {
            path: bin_path.display().to_string(),
            detail: format!("expected {expected_bytes} bytes, file has {actual_bytes}"),
        });
    }
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut windows = Array3::zeros((sidecar.n_windows, sidecar.window_length, N_CHANNELS));
    let mut buf = vec![0u8; sidecar.window_length * N_CHANNELS * 4];
    for mut window in windows.outer_iter_mut() {
        reader
            .read_exact(&mut buf)
            .map_err(|e| Error::io(bin_path.display().to_string(), e))?;
        hasher.update(&buf);
        for (v, chunk) in window.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
    }
    let digest = format!("{:x}", hasher.finalize());
    if digest != sidecar.windows_sha256 {
        return Err(Error::CorruptArtifact {
            path: bin_path.display().to_string(),
            detail: "window tensor checksum mismatch".into(),
        });
    }
    let ws = WindowSet {
        windows,
        labels: sidecar.labels,
        group: sidecar.group,
        runs: sidecar.runs,
        window_length: sidecar.window_length,
        stride: sidecar.stride,
        norm: sidecar.norm,
    };
    ws.validate()?;
    sidecar.fold_plan.validate(&ws.runs)?;
    Ok((ws, sidecar.fold_plan, sidecar.config_hash))
}

/// Hash of a dataset's defining inputs, for stage-skip decisions.
pub fn dataset_stage_hash(corpus_hash: &str, window: usize, stride: usize, folds: usize, seed: u64) -> String {
    sha256_hex(format!("{corpus_hash}:{window}:{stride}:{folds}:{seed}").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_folds;
    use crate::turbine::{write_trace, FaultScenario, RunEntry, SensorTrace};
    use ndarray::Array2;
    use tempfile::TempDir;

    /// Fabricate a 42-run corpus on disk: 14 healthy + 4 per fault, each
    /// `rows` samples, with values that encode (run, t, c) so window content
    /// is checkable.
    fn fabricate_corpus(dir: &Path, rows: usize) -> CorpusManifest {
        let mut runs = Vec::new();
        let mut counts = vec![(FaultKind::Healthy, 14usize)];
        for kind in FaultKind::ALL.into_iter().skip(1) {
            counts.push((kind, 4));
        }
        for (kind, n) in counts {
            for i in 0..n {
                let run_id = format!("{}-r{i}", kind.as_str());
                let idx = runs.len() as f64;
                let values = Array2::from_shape_fn((rows, N_CHANNELS), |(t, c)| {
                    idx + t as f64 * 1e-3 + c as f64 * 10.0
                });
                let trace = SensorTrace {
                    run_id: run_id.clone(),
                    kind,
                    sample_rate: 80.0,
                    values,
                    wind_seed: 1000 + runs.len() as u64,
                    scenario: FaultScenario::standard(kind),
                };
                let file = format!("{run_id}.trace");
                write_trace(&trace, &dir.join(&file)).unwrap();
                runs.push(RunEntry {
                    run_id,
                    path: file,
                    label: kind.label(),
                    kind,
                    wind_seed: trace.wind_seed,
                    rows,
                });
            }
        }
        CorpusManifest {
            runs,
            sample_rate: 80.0,
            duration_s: rows as f64 / 80.0,
            config_hash: "test-corpus".into(),
        }
    }

    #[test]
    fn desk_scale_corpus_counts_and_content() {
        let tmp = TempDir::new().unwrap();
        let manifest = fabricate_corpus(tmp.path(), 4800);
        let manifest_path = tmp.path().join("manifest.json");
        manifest.save(&manifest_path).unwrap();

        let ws = build_corpus(&manifest, &manifest_path, 125, 125).unwrap();
        assert_eq!(ws.len(), 42 * 38);
        assert_eq!(ws.runs.len(), 42);
        let hist = ws.class_histogram();
        assert_eq!(hist[0], 14 * 38);
        for class in 1..8 {
            assert_eq!(hist[class], 4 * 38);
        }
        // Second window of run 0 starts at sample 125 of the fabricated ramp.
        assert_eq!(ws.windows[(1, 0, 0)], (125.0f64 * 1e-3) as f32);
        assert_eq!(ws.group_id(38), "healthy-r1");
        assert_eq!(ws.group_id(14 * 38), "f1-r0");
    }

    #[test]
    fn missing_trace_names_the_run() {
        let tmp = TempDir::new().unwrap();
        let manifest = fabricate_corpus(tmp.path(), 300);
        let manifest_path = tmp.path().join("manifest.json");
        std::fs::remove_file(tmp.path().join("f3-r2.trace")).unwrap();
        let err = build_corpus(&manifest, &manifest_path, 125, 125).unwrap_err();
        match err {
            Error::MissingTrace { run_id, .. } => assert_eq!(run_id, "f3-r2"),
            other => panic!("expected MissingTrace, got {other}"),
        }
    }

    #[test]
    fn empty_manifest_rejected() {
        let manifest = CorpusManifest {
            runs: vec![],
            sample_rate: 80.0,
            duration_s: 0.0,
            config_hash: String::new(),
        };
        assert!(build_corpus(&manifest, Path::new("manifest.json"), 125, 125).is_err());
    }

    #[test]
    fn row_count_mismatch_detected() {
        let tmp = TempDir::new().unwrap();
        let mut manifest = fabricate_corpus(tmp.path(), 300);
        manifest.runs[0].rows = 301;
        let manifest_path = tmp.path().join("manifest.json");
        let err = build_corpus(&manifest, &manifest_path, 125, 125).unwrap_err();
        assert!(matches!(err, Error::CorruptArtifact { .. }), "got {err}");
    }

    #[test]
    fn dataset_round_trips_bit_exactly() {
        let tmp = TempDir::new().unwrap();
        let manifest = fabricate_corpus(tmp.path(), 400);
        let manifest_path = tmp.path().join("manifest.json");
        let ws = build_corpus(&manifest, &manifest_path, 125, 125).unwrap();
        let plan = make_folds(&ws.runs, 10, 7).unwrap();

        let out = tmp.path().join("dataset");
        save_dataset(&ws, &plan, "cfg-hash", &out).unwrap();
        let (loaded, loaded_plan, hash) = load_dataset(&out).unwrap();

        assert_eq!(loaded, ws);
        assert_eq!(loaded_plan, plan);
        assert_eq!(hash, "cfg-hash");
    }

    #[test]
    fn truncated_tensor_detected() {
        let tmp = TempDir::new().unwrap();
        let manifest = fabricate_corpus(tmp.path(), 250);
        let manifest_path = tmp.path().join("manifest.json");
        let ws = build_corpus(&manifest, &manifest_path, 125, 125).unwrap();
        let plan = make_folds(&ws.runs, 5, 7).unwrap();
        let out = tmp.path().join("dataset");
        save_dataset(&ws, &plan, "h", &out).unwrap();

        let bin = out.join("windows.bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            load_dataset(&out),
            Err(Error::CorruptArtifact { .. })
        ));
    }

    #[test]
    fn flipped_byte_detected() {
        let tmp = TempDir::new().unwrap();
        let manifest = fabricate_corpus(tmp.path(), 250);
        let manifest_path = tmp.path().join("manifest.json");
        let ws = build_corpus(&manifest, &manifest_path, 125, 125).unwrap();
        let plan = make_folds(&ws.runs, 5, 7).unwrap();
        let out = tmp.path().join("dataset");
        save_dataset(&ws, &plan, "h", &out).unwrap();

        let bin = out.join("windows.bin");
        let mut bytes = std::fs::read(&bin).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&bin, &bytes).unwrap();
        assert!(matches!(
            load_dataset(&out),
            Err(Error::CorruptArtifact { .. })
        ));
    }
}
