//! Staged, resumable experiment pipeline over one run directory.
//!
//! [`Pipeline::full_run`] drives six stages in order — simulate,
//! build-dataset, train, predict, evaluate, visualize — all rooted at the
//! configured output directory:
//!
//! ```text
//! <output_root>/
//!   manifest.json      completed-stage hashes, rewritten atomically per stage
//!   ledger.jsonl       append-only event log (the only place wall time goes)
//!   .lock              held for the duration of one full run
//!   traces/            simulated 80 Hz sensor traces + corpus manifest
//!   dataset/           windows.bin + dataset.json sidecar
//!   checkpoints/       one model checkpoint per architecture × fold
//!   predictions/       MC-dropout distributions per architecture × fold
//!   reports/           metrics.json, tables.md, figures/*.svg
//! ```
//!
//! Each stage's identity is a hash chained from its own config block and
//! the upstream stage's hash, so editing, say, the epoch count reruns
//! training and everything after it while the slow simulation stands. A
//! stage is skipped only when its recorded hash matches and its outputs
//! are still present. Artifacts embed the chain hash of the stage that
//! wrote them and every consumer verifies it, so artifacts from different
//! configurations never mix silently. All stages are bit-deterministic:
//! a stage rebuilt from unchanged inputs reproduces its artifacts exactly,
//! which is what makes skipping a downstream stage sound. Reports are
//! byte-identical across repeated runs; wall-clock times live only in the
//! ledger.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, RunConfig};
use crate::dataset::{
    apply_normalizer, build_corpus, dataset_stage_hash, load_dataset, make_folds, save_dataset,
    FoldPlan, WindowSet,
};
use crate::error::{Error, Result};
use crate::eval::cv::{
    assemble_report, baseline_classifiers, outcome_from_distributions, outcome_from_eval_pass,
    EvalReport, FoldFailure, FoldOutcome,
};
use crate::eval::report::{class_names, render_reports};
use crate::eval::tsne::tsne_embed;
use crate::nn::arch::{build_model, AnyModel, Arch, FusionTap, NUM_CLASSES};
use crate::nn::{
    load_checkpoint, save_checkpoint, train_model, AdamConfig, CheckpointMeta, TrainOptions,
};
use crate::plot::{entropy_histogram_svg, scatter_svg};
use crate::turbine::{
    generate_wind, run_simulation, write_trace, CorpusManifest, FaultKind, FaultScenario,
    RunEntry, TurbineParams, SAMPLE_RATE_HZ, SUBSTEPS_PER_SAMPLE,
};
use crate::uq::{mc_predict, uncertainty_report, McOptions, PredictionDistribution};

/// One pipeline stage, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Simulate,
    BuildDataset,
    Train,
    Predict,
    Evaluate,
    Visualize,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Simulate,
        Stage::BuildDataset,
        Stage::Train,
        Stage::Predict,
        Stage::Evaluate,
        Stage::Visualize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::BuildDataset => "build-dataset",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
            Stage::Visualize => "visualize",
        }
    }
}

/// What a [`StageEvent`] announces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Started,
    /// A unit of work inside a running stage (one trace, one fold, ...).
    Progress,
    Skipped,
    Completed,
    Failed,
}

/// One machine-readable progress event: a single JSON line in the ledger,
/// also handed to the caller's sink for console output.
#[derive(Debug, Clone, Serialize)]
pub struct StageEvent {
    pub stage: &'static str,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Wall seconds since the enclosing unit started.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_s: Option<f64>,
}

impl StageEvent {
    fn new(stage: &'static str, status: StageStatus) -> Self {
        StageEvent {
            stage,
            status,
            detail: None,
            wall_s: None,
        }
    }

    fn with(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    fn timed(mut self, wall_s: f64) -> Self {
        self.wall_s = Some(wall_s);
        self
    }
}

/// Record of which stages completed under which chain hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Hash of the full configuration, for human orientation.
    pub config_hash: String,
    /// Stage name → chain hash at the time the stage last completed.
    pub stages: BTreeMap<String, String>,
}

impl Manifest {
    fn path(root: &Path) -> PathBuf {
        root.join("manifest.json")
    }

    fn load_or_new(root: &Path, config_hash: &str) -> Result<Manifest> {
        let path = Self::path(root);
        if !path.exists() {
            return Ok(Manifest {
                config_hash: config_hash.to_string(),
                stages: BTreeMap::new(),
            });
        }
        let text =
            fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::CorruptArtifact {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    /// Atomic rewrite: write to a temporary file, then rename over.
    fn save(&self, root: &Path) -> Result<()> {
        let path = Self::path(root);
        let tmp = root.join("manifest.json.tmp");
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&tmp, text.as_bytes()).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Chain hashes: each stage's hash covers its config block and the hash of
/// the stage feeding it.
#[derive(Debug, Clone)]
struct StageHashes {
    simulate: String,
    dataset: String,
    train: String,
    predict: String,
    evaluate: String,
    visualize: String,
}

fn stage_hashes(cfg: &RunConfig) -> StageHashes {
    let sim_block = serde_json::to_string(&cfg.simulator).expect("config serializes");
    let simulate = sha256_hex(format!("simulate:{sim_block}").as_bytes());
    let dataset = dataset_stage_hash(
        &simulate,
        cfg.dataset.window,
        cfg.dataset.stride,
        cfg.dataset.folds,
        cfg.dataset.seed,
    );
    let model_block = serde_json::to_string(&cfg.model).expect("config serializes");
    let train = sha256_hex(format!("train:{model_block}:{dataset}").as_bytes());
    let uq_block = serde_json::to_string(&cfg.uq).expect("config serializes");
    let predict = sha256_hex(format!("predict:{uq_block}:{train}").as_bytes());
    let evaluate = sha256_hex(format!("evaluate:{predict}").as_bytes());
    let visualize = sha256_hex(format!("visualize:{evaluate}").as_bytes());
    StageHashes {
        simulate,
        dataset,
        train,
        predict,
        evaluate,
        visualize,
    }
}

impl StageHashes {
    fn of(&self, stage: Stage) -> &str {
        match stage {
            Stage::Simulate => &self.simulate,
            Stage::BuildDataset => &self.dataset,
            Stage::Train => &self.train,
            Stage::Predict => &self.predict,
            Stage::Evaluate => &self.evaluate,
            Stage::Visualize => &self.visualize,
        }
    }
}

/// Removes the lock file when the run ends, however it ends.
struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(root: &Path) -> Result<LockGuard> {
        let path = root.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} exists: another full run appears active in this directory; \
                 remove the lock file if that process is gone",
                path.display()
            ))),
            Err(e) => Err(Error::io(path.display().to_string(), e)),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// MC-dropout output of one architecture on one fold's held-out windows.
#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionFile {
    /// Chain hash of the predict stage that wrote this file.
    pub config_hash: String,
    pub arch: Arch,
    pub fold: usize,
    /// Stochastic passes per window.
    pub k: usize,
    pub seed: u64,
    /// Window indices into the dataset, in scoring order.
    pub window_indices: Vec<usize>,
    pub truth: Vec<u8>,
    pub dists: Vec<PredictionDistribution>,
}

/// Per-(architecture, fold) failures of a stage that tolerates them.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct UnitFailure {
    arch: Arch,
    fold: usize,
    detail: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FailureFile {
    config_hash: String,
    failures: Vec<UnitFailure>,
}

/// Index of what the visualize stage produced (and what it had to skip).
#[derive(Debug, Serialize, Deserialize)]
struct VisualizeIndex {
    config_hash: String,
    /// File names relative to the figures directory.
    files: Vec<String>,
    notes: Vec<String>,
}

/// Wind seed for one run: distinct across (base, class, run index) as long
/// as fewer than 100 000 runs per class are configured.
fn wind_seed(base: u64, label: u8, idx: usize) -> u64 {
    base.wrapping_mul(1_000_000)
        .wrapping_add(label as u64 * 100_000)
        .wrapping_add(idx as u64)
}

const MAX_RUNS_PER_CLASS: usize = 100_000;

/// Largest point count handed to the t-SNE embedding.
const MAX_EMBED_WINDOWS: usize = 1000;

fn checkpoint_path(dir: &Path, arch: Arch, fold: usize) -> PathBuf {
    dir.join(format!("{}-f{}.ckpt", arch.name(), fold))
}

fn prediction_path(dir: &Path, arch: Arch, fold: usize) -> PathBuf {
    dir.join(format!("{}-f{}.json", arch.name(), fold))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).expect("value serializes");
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::CorruptArtifact {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn mixed_hash_error(path: &Path, found: &str, expected: &str) -> Error {
    let short = |h: &str| h.chars().take(12).collect::<String>();
    Error::Config(format!(
        "{} was produced under config hash {}…, this run expects {}…; \
         refusing to mix artifacts from different configurations",
        path.display(),
        short(found),
        short(expected)
    ))
}

/// The orchestrator: owns the config, its hash chain, and the run root.
pub struct Pipeline {
    cfg: RunConfig,
    root: PathBuf,
    config_hash: String,
    hashes: StageHashes,
}

impl Pipeline {
    /// Validate the config and derive the hash chain. Nothing is written.
    pub fn new(cfg: RunConfig) -> Result<Pipeline> {
        cfg.validate()?;
        if cfg.simulator.healthy_runs > MAX_RUNS_PER_CLASS
            || cfg.simulator.fault_runs > MAX_RUNS_PER_CLASS
        {
            return Err(Error::Config(format!(
                "at most {MAX_RUNS_PER_CLASS} runs per class are supported"
            )));
        }
        let root = PathBuf::from(&cfg.output_root);
        let config_hash = cfg.content_hash();
        let hashes = stage_hashes(&cfg);
        Ok(Pipeline {
            cfg,
            root,
            config_hash,
            hashes,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Chain hash a given stage runs (and stamps its artifacts) under.
    pub fn stage_hash(&self, stage: Stage) -> &str {
        self.hashes.of(stage)
    }

    /// Run every stage in order, skipping the ones whose recorded hash and
    /// outputs are both current. Events stream to `sink` and to the ledger.
    pub fn full_run(&self, sink: &mut dyn FnMut(&StageEvent)) -> Result<Manifest> {
        self.cfg.validate()?;
        fs::create_dir_all(&self.root)
            .map_err(|e| Error::io(self.root.display().to_string(), e))?;
        let _lock = LockGuard::acquire(&self.root)?;
        let ledger_path = self.root.join("ledger.jsonl");
        let mut ledger = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&ledger_path)
            .map_err(|e| Error::io(ledger_path.display().to_string(), e))?;
        let mut manifest = Manifest::load_or_new(&self.root, &self.config_hash)?;
        manifest.config_hash = self.config_hash.clone();

        let run_start = Instant::now();
        let mut emit = |ev: StageEvent| {
            if let Ok(line) = serde_json::to_string(&ev) {
                let _ = writeln!(ledger, "{line}");
            }
            sink(&ev);
        };
        emit(StageEvent::new("full-run", StageStatus::Started).with(format!(
            "config {} dataset-stage {} seeds sim={} fold={} model={} uq={}",
            self.config_hash,
            self.hashes.dataset,
            self.cfg.simulator.base_seed,
            self.cfg.dataset.seed,
            self.cfg.model.seed,
            self.cfg.uq.seed
        )));

        // Dataset shared by the four stages that consume it, loaded once.
        let mut data: Option<(WindowSet, FoldPlan)> = None;
        for stage in Stage::ALL {
            let name = stage.name();
            let hash = self.hashes.of(stage);
            let recorded = manifest.stages.get(name).map(String::as_str);
            if recorded == Some(hash) && self.outputs_present(stage) {
                emit(StageEvent::new(name, StageStatus::Skipped).with("outputs current"));
                continue;
            }
            emit(StageEvent::new(name, StageStatus::Started));
            let t0 = Instant::now();
            let result = self.execute(stage, &mut data, &mut emit);
            let wall = t0.elapsed().as_secs_f64();
            match result {
                Ok(detail) => {
                    emit(StageEvent::new(name, StageStatus::Completed)
                        .with(detail)
                        .timed(wall));
                    manifest.stages.insert(name.to_string(), hash.to_string());
                    manifest.save(&self.root)?;
                }
                Err(err) => {
                    emit(StageEvent::new(name, StageStatus::Failed)
                        .with(err.to_string())
                        .timed(wall));
                    return Err(err.in_stage(name));
                }
            }
        }
        emit(StageEvent::new("full-run", StageStatus::Completed)
            .timed(run_start.elapsed().as_secs_f64()));
        Ok(manifest)
    }

    fn execute(
        &self,
        stage: Stage,
        data: &mut Option<(WindowSet, FoldPlan)>,
        emit: &mut dyn FnMut(StageEvent),
    ) -> Result<String> {
        match stage {
            Stage::Simulate => self.stage_simulate(emit),
            Stage::BuildDataset => {
                *data = None; // anything cached predates the rebuild
                self.stage_build_dataset()
            }
            Stage::Train => {
                self.load_data(data)?;
                self.stage_train(data.as_ref().expect("loaded"), emit)
            }
            Stage::Predict => {
                self.load_data(data)?;
                self.stage_predict(data.as_ref().expect("loaded"), emit)
            }
            Stage::Evaluate => {
                self.load_data(data)?;
                self.stage_evaluate(data.as_ref().expect("loaded"))
            }
            Stage::Visualize => {
                self.load_data(data)?;
                self.stage_visualize(data.as_ref().expect("loaded"))
            }
        }
    }

    /// Load the persisted dataset into the shared cache, verifying that it
    /// was built by this configuration's dataset stage.
    fn load_data(&self, cache: &mut Option<(WindowSet, FoldPlan)>) -> Result<()> {
        if cache.is_some() {
            return Ok(());
        }
        let dir = self.root.join("dataset");
        let (ws, plan, hash) = load_dataset(&dir)?;
        if hash != self.hashes.dataset {
            return Err(mixed_hash_error(&dir.join("dataset.json"), &hash, &self.hashes.dataset));
        }
        *cache = Some((ws, plan));
        Ok(())
    }

    /// Cheap existence probes for a stage's outputs. Only consulted when
    /// the recorded chain hash already matches, so presence is enough.
    fn outputs_present(&self, stage: Stage) -> bool {
        let k = self.cfg.dataset.folds;
        match stage {
            Stage::Simulate => self.root.join("traces/manifest.json").exists(),
            Stage::BuildDataset => {
                self.root.join("dataset/dataset.json").exists()
                    && self.root.join("dataset/windows.bin").exists()
            }
            Stage::Train => self.units_present(
                &self.root.join("checkpoints"),
                &self.hashes.train,
                |dir, arch, fold| checkpoint_path(dir, arch, fold).exists(),
                k,
            ),
            Stage::Predict => self.units_present(
                &self.root.join("predictions"),
                &self.hashes.predict,
                |dir, arch, fold| prediction_path(dir, arch, fold).exists(),
                k,
            ),
            Stage::Evaluate => {
                self.root.join("reports/metrics.json").exists()
                    && self.root.join("reports/tables.md").exists()
            }
            Stage::Visualize => {
                let fig_dir = self.root.join("reports/figures");
                let Ok(index) = read_json::<VisualizeIndex>(&fig_dir.join("visualize.json"))
                else {
                    return false;
                };
                index.config_hash == self.hashes.visualize
                    && index.files.iter().all(|f| fig_dir.join(f).exists())
            }
        }
    }

    /// A train/predict output set is present when every (arch, fold) unit
    /// either has its artifact or is excused by the stage's failure file.
    fn units_present(
        &self,
        dir: &Path,
        stage_hash: &str,
        exists: impl Fn(&Path, Arch, usize) -> bool,
        k: usize,
    ) -> bool {
        let Ok(fails) = read_json::<FailureFile>(&dir.join("failures.json")) else {
            return false;
        };
        if fails.config_hash != stage_hash {
            return false;
        }
        let excused: BTreeSet<(&str, usize)> = fails
            .failures
            .iter()
            .map(|f| (f.arch.name(), f.fold))
            .collect();
        self.cfg.model.archs.iter().all(|&arch| {
            (0..k).all(|fold| {
                excused.contains(&(arch.name(), fold)) || exists(dir, arch, fold)
            })
        })
    }

    // ---- stages ---------------------------------------------------------

    fn stage_simulate(&self, emit: &mut dyn FnMut(StageEvent)) -> Result<String> {
        let sim = &self.cfg.simulator;
        let dir = self.root.join("traces");
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let params = TurbineParams::default();
        let dt = 1.0 / (SAMPLE_RATE_HZ * SUBSTEPS_PER_SAMPLE as f64);
        let mut runs = Vec::new();
        for kind in FaultKind::ALL {
            let n = if kind == FaultKind::Healthy {
                sim.healthy_runs
            } else {
                sim.fault_runs
            };
            for idx in 0..n {
                let t0 = Instant::now();
                let seed = wind_seed(sim.base_seed, kind.label(), idx);
                let run_id = format!("{}-s{seed}", kind.as_str());
                let wind = generate_wind(
                    seed,
                    sim.duration_s,
                    dt,
                    sim.mean_wind,
                    sim.turbulence_intensity,
                )?;
                let scenario = FaultScenario::standard(kind);
                let out = run_simulation(&params, &scenario, &wind, sim.duration_s, &run_id)?;
                let rel = format!("{run_id}.trace");
                write_trace(&out.trace, &dir.join(&rel))?;
                runs.push(RunEntry {
                    run_id: run_id.clone(),
                    path: rel,
                    label: kind.label(),
                    kind,
                    wind_seed: seed,
                    rows: out.trace.rows(),
                });
                emit(StageEvent::new("simulate", StageStatus::Progress)
                    .with(run_id)
                    .timed(t0.elapsed().as_secs_f64()));
            }
        }
        let manifest = CorpusManifest {
            runs,
            sample_rate: SAMPLE_RATE_HZ,
            duration_s: sim.duration_s,
            config_hash: self.hashes.simulate.clone(),
        };
        let n = manifest.runs.len();
        manifest.save(&dir.join("manifest.json"))?;
        Ok(format!("{n} traces"))
    }

    fn stage_build_dataset(&self) -> Result<String> {
        let manifest_path = self.root.join("traces/manifest.json");
        let manifest = CorpusManifest::load(&manifest_path)?;
        if manifest.config_hash != self.hashes.simulate {
            return Err(mixed_hash_error(
                &manifest_path,
                &manifest.config_hash,
                &self.hashes.simulate,
            ));
        }
        let ds = &self.cfg.dataset;
        let ws = build_corpus(&manifest, &manifest_path, ds.window, ds.stride)?;
        let plan = make_folds(&ws.runs, ds.folds, ds.seed)?;
        let dir = self.root.join("dataset");
        save_dataset(&ws, &plan, &self.hashes.dataset, &dir)?;
        Ok(format!("{} windows from {} runs", ws.len(), ws.runs.len()))
    }

    fn stage_train(
        &self,
        data: &(WindowSet, FoldPlan),
        emit: &mut dyn FnMut(StageEvent),
    ) -> Result<String> {
        let (ws, plan) = data;
        let dir = self.root.join("checkpoints");
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let m = &self.cfg.model;
        let opts = TrainOptions {
            epochs: m.epochs,
            batch_size: m.batch,
            seed: m.seed,
            adam: AdamConfig {
                lr: m.learning_rate,
                ..AdamConfig::default()
            },
            ..TrainOptions::default()
        };
        let names: Vec<String> = class_names().iter().map(|s| s.to_string()).collect();
        let mut failures = Vec::new();
        let mut written = 0usize;
        for &arch in &m.archs {
            for fold in 0..plan.k {
                let t0 = Instant::now();
                let result = (|| -> Result<f64> {
                    let mut model = build_model::<f32>(arch, m.seed);
                    let record = train_model(&mut model, ws, plan, fold, &opts)?;
                    let final_loss = record.train_loss.last().copied().unwrap_or(f64::NAN);
                    let meta = CheckpointMeta {
                        arch,
                        fold,
                        epochs: m.epochs,
                        batch_size: m.batch,
                        seed: m.seed,
                        learning_rate: m.learning_rate,
                        train_loss: record.train_loss,
                        val_loss: record.val_loss,
                        val_runs: record.val_runs,
                        norm: record.norm,
                        class_names: names.clone(),
                        config_hash: self.hashes.train.clone(),
                    };
                    save_checkpoint(&mut model, &meta, &checkpoint_path(&dir, arch, fold))?;
                    Ok(final_loss)
                })();
                let wall = t0.elapsed().as_secs_f64();
                match result {
                    Ok(loss) => {
                        written += 1;
                        emit(StageEvent::new("train", StageStatus::Progress)
                            .with(format!("{} fold {fold}: final loss {loss:.4}", arch.name()))
                            .timed(wall));
                    }
                    Err(err) => {
                        emit(StageEvent::new("train", StageStatus::Progress)
                            .with(format!("{} fold {fold} FAILED: {err}", arch.name()))
                            .timed(wall));
                        failures.push(UnitFailure {
                            arch,
                            fold,
                            detail: err.to_string(),
                        });
                    }
                }
            }
        }
        let n_failures = failures.len();
        write_json(
            &dir.join("failures.json"),
            &FailureFile {
                config_hash: self.hashes.train.clone(),
                failures,
            },
        )?;
        if written == 0 {
            return Err(Error::invalid(
                "every architecture × fold combination failed to train",
            ));
        }
        Ok(format!("{written} checkpoints, {n_failures} failures"))
    }

    fn stage_predict(
        &self,
        data: &(WindowSet, FoldPlan),
        emit: &mut dyn FnMut(StageEvent),
    ) -> Result<String> {
        let (ws, plan) = data;
        let ck_dir = self.root.join("checkpoints");
        let dir = self.root.join("predictions");
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let uq = &self.cfg.uq;
        let mc = McOptions {
            k: uq.k,
            seed: uq.seed,
            retain_passes: false,
        };
        let mut failures = Vec::new();
        let mut written = 0usize;
        for &arch in &self.cfg.model.archs {
            for fold in 0..plan.k {
                let t0 = Instant::now();
                let result = (|| -> Result<usize> {
                    let (mut model, meta) = self.load_fold_checkpoint(&ck_dir, arch, fold)?;
                    let (_, test_idx) = plan.split_windows(ws, fold)?;
                    let (raw, truth) = ws.gather(&test_idx);
                    let x = apply_normalizer(&meta.norm, &raw.view())?;
                    let dists = mc_predict(&mut model, &x.view(), &mc)?;
                    let n = dists.len();
                    let file = PredictionFile {
                        config_hash: self.hashes.predict.clone(),
                        arch,
                        fold,
                        k: uq.k,
                        seed: uq.seed,
                        window_indices: test_idx,
                        truth,
                        dists,
                    };
                    write_json(&prediction_path(&dir, arch, fold), &file)?;
                    Ok(n)
                })();
                let wall = t0.elapsed().as_secs_f64();
                match result {
                    Ok(n) => {
                        written += 1;
                        emit(StageEvent::new("predict", StageStatus::Progress)
                            .with(format!("{} fold {fold}: {n} windows × {} passes", arch.name(), uq.k))
                            .timed(wall));
                    }
                    Err(err) => {
                        emit(StageEvent::new("predict", StageStatus::Progress)
                            .with(format!("{} fold {fold} FAILED: {err}", arch.name()))
                            .timed(wall));
                        failures.push(UnitFailure {
                            arch,
                            fold,
                            detail: err.to_string(),
                        });
                    }
                }
            }
        }
        let n_failures = failures.len();
        write_json(
            &dir.join("failures.json"),
            &FailureFile {
                config_hash: self.hashes.predict.clone(),
                failures,
            },
        )?;
        if written == 0 {
            return Err(Error::invalid(
                "no fold produced predictions (were any checkpoints written?)",
            ));
        }
        Ok(format!("{written} prediction files, {n_failures} failures"))
    }

    /// Load one fold's checkpoint and verify its stamp and identity.
    fn load_fold_checkpoint(
        &self,
        ck_dir: &Path,
        arch: Arch,
        fold: usize,
    ) -> Result<(AnyModel<f32>, CheckpointMeta)> {
        let path = checkpoint_path(ck_dir, arch, fold);
        if !path.exists() {
            return Err(Error::invalid(format!(
                "checkpoint {} is missing (training failed or was interrupted)",
                path.display()
            )));
        }
        let (model, meta) = load_checkpoint(&path)?;
        if meta.config_hash != self.hashes.train {
            return Err(mixed_hash_error(&path, &meta.config_hash, &self.hashes.train));
        }
        if meta.arch != arch || meta.fold != fold {
            return Err(Error::CorruptArtifact {
                path: path.display().to_string(),
                detail: format!(
                    "file claims {} fold {}, expected {} fold {fold}",
                    meta.arch.name(),
                    meta.fold,
                    arch.name()
                ),
            });
        }
        Ok((model, meta))
    }

    fn stage_evaluate(&self, data: &(WindowSet, FoldPlan)) -> Result<String> {
        let (ws, plan) = data;
        let ck_dir = self.root.join("checkpoints");
        let pred_dir = self.root.join("predictions");
        let train_excuses = self.stage_excuses(&ck_dir, &self.hashes.train);
        let pred_excuses = self.stage_excuses(&pred_dir, &self.hashes.predict);
        let eval_hash = &self.hashes.evaluate;
        let m = &self.cfg.model;

        let mut reports = Vec::new();
        for &arch in &m.archs {
            // Deterministic single-pass scoring from the checkpoints.
            let mut folds: Vec<FoldOutcome> = Vec::new();
            let mut fails: Vec<FoldFailure> = Vec::new();
            let mut losses: BTreeMap<usize, Option<f64>> = BTreeMap::new();
            for fold in 0..plan.k {
                match self.plain_fold(ws, plan, &ck_dir, arch, fold) {
                    Ok((outcome, loss)) => {
                        losses.insert(fold, loss);
                        folds.push(outcome);
                    }
                    Err(err) => fails.push(FoldFailure {
                        fold,
                        detail: excuse_or(&train_excuses, arch, fold, err),
                    }),
                }
            }
            reports.push(assemble_report(arch.name(), None, eval_hash, m.seed, folds, fails)?);

            // MC-dropout scoring from the persisted prediction files.
            let mut folds: Vec<FoldOutcome> = Vec::new();
            let mut fails: Vec<FoldFailure> = Vec::new();
            for fold in 0..plan.k {
                let loss = losses.get(&fold).copied().flatten();
                match self.uq_fold(ws, plan, &pred_dir, arch, fold, loss) {
                    Ok(outcome) => folds.push(outcome),
                    Err(err) => fails.push(FoldFailure {
                        fold,
                        detail: excuse_or(&pred_excuses, arch, fold, err),
                    }),
                }
            }
            reports.push(assemble_report(
                arch.name(),
                Some(self.cfg.uq.seed),
                eval_hash,
                m.seed,
                folds,
                fails,
            )?);
        }

        let (dt, rf) = baseline_classifiers(ws, plan, m.seed, eval_hash)?;
        reports.push(dt);
        reports.push(rf);

        let n = reports.len();
        render_reports(&reports, &self.root.join("reports"))?;
        Ok(format!("{n} reports rendered"))
    }

    /// Failure details a tolerant stage recorded, keyed by (arch, fold).
    fn stage_excuses(
        &self,
        dir: &Path,
        stage_hash: &str,
    ) -> BTreeMap<(&'static str, usize), String> {
        let mut map = BTreeMap::new();
        if let Ok(file) = read_json::<FailureFile>(&dir.join("failures.json")) {
            if file.config_hash == stage_hash {
                for f in file.failures {
                    map.insert((f.arch.name(), f.fold), f.detail);
                }
            }
        }
        map
    }

    fn plain_fold(
        &self,
        ws: &WindowSet,
        plan: &FoldPlan,
        ck_dir: &Path,
        arch: Arch,
        fold: usize,
    ) -> Result<(FoldOutcome, Option<f64>)> {
        let (mut model, meta) = self.load_fold_checkpoint(ck_dir, arch, fold)?;
        let (_, test_idx) = plan.split_windows(ws, fold)?;
        let (raw, truth) = ws.gather(&test_idx);
        let x = apply_normalizer(&meta.norm, &raw.view())?;
        let loss = meta.train_loss.last().copied();
        let outcome =
            outcome_from_eval_pass(ws, &test_idx, &truth, &mut model, &x.view(), fold, loss)?;
        Ok((outcome, loss))
    }

    fn uq_fold(
        &self,
        ws: &WindowSet,
        plan: &FoldPlan,
        pred_dir: &Path,
        arch: Arch,
        fold: usize,
        final_train_loss: Option<f64>,
    ) -> Result<FoldOutcome> {
        let path = prediction_path(pred_dir, arch, fold);
        if !path.exists() {
            return Err(Error::invalid(format!(
                "prediction file {} is missing",
                path.display()
            )));
        }
        let file: PredictionFile = read_json(&path)?;
        if file.config_hash != self.hashes.predict {
            return Err(mixed_hash_error(&path, &file.config_hash, &self.hashes.predict));
        }
        if file.arch != arch || file.fold != fold {
            return Err(Error::CorruptArtifact {
                path: path.display().to_string(),
                detail: format!(
                    "file claims {} fold {}, expected {} fold {fold}",
                    file.arch.name(),
                    file.fold,
                    arch.name()
                ),
            });
        }
        let (_, test_idx) = plan.split_windows(ws, fold)?;
        if file.window_indices != test_idx {
            return Err(Error::CorruptArtifact {
                path: path.display().to_string(),
                detail: "prediction file indexes different windows than the fold plan".into(),
            });
        }
        outcome_from_distributions(ws, &test_idx, &file.truth, &file.dists, fold, final_train_loss)
    }

    fn stage_visualize(&self, data: &(WindowSet, FoldPlan)) -> Result<String> {
        let (ws, plan) = data;
        let fig_dir = self.root.join("reports/figures");
        fs::create_dir_all(&fig_dir).map_err(|e| Error::io(fig_dir.display().to_string(), e))?;
        let names = class_names();
        let mut files = Vec::new();
        let mut notes = Vec::new();

        // Predictive-entropy histograms, pooled over every scored fold.
        let pred_dir = self.root.join("predictions");
        for &arch in &self.cfg.model.archs {
            let mut dists: Vec<PredictionDistribution> = Vec::new();
            let mut truth: Vec<u8> = Vec::new();
            for fold in 0..plan.k {
                let path = prediction_path(&pred_dir, arch, fold);
                if !path.exists() {
                    notes.push(format!("{} fold {fold}: no predictions", arch.name()));
                    continue;
                }
                let file: PredictionFile = read_json(&path)?;
                if file.config_hash != self.hashes.predict {
                    return Err(mixed_hash_error(&path, &file.config_hash, &self.hashes.predict));
                }
                dists.extend(file.dists);
                truth.extend(file.truth);
            }
            if dists.is_empty() {
                notes.push(format!("{}: no entropy histogram", arch.name()));
                continue;
            }
            let report = uncertainty_report(&dists, &truth)?;
            let svg = entropy_histogram_svg(&report)?;
            let name = format!("entropy-{}.svg", arch.name());
            let path = fig_dir.join(&name);
            fs::write(&path, svg).map_err(|e| Error::io(path.display().to_string(), e))?;
            files.push(name);
        }

        // t-SNE of the fused features, when the fused architecture is in play.
        if self.cfg.model.archs.contains(&Arch::Casu2Net) {
            self.tsne_figures(ws, plan, &fig_dir, &names, &mut files, &mut notes)?;
        } else {
            notes.push("casu2net not configured; fused-feature embedding skipped".into());
        }

        let index = VisualizeIndex {
            config_hash: self.hashes.visualize.clone(),
            files: files.clone(),
            notes,
        };
        write_json(&fig_dir.join("visualize.json"), &index)?;
        Ok(format!("{} figures", files.len()))
    }

    /// Embed fold 0's held-out windows at both fusion taps.
    fn tsne_figures(
        &self,
        ws: &WindowSet,
        plan: &FoldPlan,
        fig_dir: &Path,
        names: &[&str],
        files: &mut Vec<String>,
        notes: &mut Vec<String>,
    ) -> Result<()> {
        let ck_dir = self.root.join("checkpoints");
        let ck = checkpoint_path(&ck_dir, Arch::Casu2Net, 0);
        if !ck.exists() {
            notes.push("casu2net fold 0 checkpoint missing; embedding skipped".into());
            return Ok(());
        }
        let (mut model, meta) = self.load_fold_checkpoint(&ck_dir, Arch::Casu2Net, 0)?;
        let (_, test_idx) = plan.split_windows(ws, 0)?;
        let picked = stratified_cap(&test_idx, ws, MAX_EMBED_WINDOWS);
        let n = picked.len();
        if n < 8 {
            notes.push(format!("only {n} held-out windows; embedding skipped"));
            return Ok(());
        }
        let (raw, labels) = ws.gather(&picked);
        let x = apply_normalizer(&meta.norm, &raw.view())?;
        // Keep the perplexity precondition (n > 3·perplexity) satisfied on
        // small runs; 30 is the default at full scale.
        let perplexity = (((n - 1) / 3).min(30).max(1)) as f64;
        for tap in [FusionTap::Fusion1, FusionTap::Fusion2] {
            let features = fused_in_chunks(&mut model, &x, tap)?;
            let points = tsne_embed(&features.view(), perplexity, self.cfg.model.seed)?;
            let svg = scatter_svg(
                &points.view(),
                &labels,
                names,
                &format!("fused features ({}), t-SNE", tap.name()),
            )?;
            let name = format!("tsne-{}.svg", tap.name());
            let path = fig_dir.join(&name);
            fs::write(&path, svg).map_err(|e| Error::io(path.display().to_string(), e))?;
            files.push(name);
        }
        Ok(())
    }
}

fn excuse_or(
    excuses: &BTreeMap<(&'static str, usize), String>,
    arch: Arch,
    fold: usize,
    err: Error,
) -> String {
    match excuses.get(&(arch.name(), fold)) {
        Some(detail) => format!("upstream stage failed this fold: {detail}"),
        None => err.to_string(),
    }
}

/// Forward windows through the fusion tap in bounded batches.
fn fused_in_chunks(
    model: &mut AnyModel<f32>,
    x: &Array3<f32>,
    tap: FusionTap,
) -> Result<Array2<f32>> {
    let n = x.dim().0;
    let mut out: Option<Array2<f32>> = None;
    let mut start = 0;
    while start < n {
        let end = (start + 64).min(n);
        let xb = x.slice(s![start..end, .., ..]).to_owned();
        let features = model.fused_features(&xb, tap)?;
        let sink = out.get_or_insert_with(|| Array2::zeros((n, features.dim().1)));
        sink.slice_mut(s![start..end, ..]).assign(&features);
        start = end;
    }
    out.ok_or_else(|| Error::invalid("no windows to embed"))
}

/// At most `cap` indices, drawn round-robin across classes so every class
/// stays represented; returned in window order.
fn stratified_cap(idx: &[usize], ws: &WindowSet, cap: usize) -> Vec<usize> {
    if idx.len() <= cap {
        return idx.to_vec();
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for &i in idx {
        by_class[ws.labels[i] as usize].push(i);
    }
    let mut out = Vec::with_capacity(cap);
    let mut cursor = vec![0usize; NUM_CLASSES];
    'fill: loop {
        let mut advanced = false;
        for (c, bucket) in by_class.iter().enumerate() {
            if out.len() == cap {
                break 'fill;
            }
            if cursor[c] < bucket.len() {
                out.push(bucket[cursor[c]]);
                cursor[c] += 1;
                advanced = true;
            }
        }
        if !advanced {
            break;
        }
    }
    out.sort_unstable();
    out
}
