//! Run configuration: profiles, overrides, and content hashing.
//!
//! One TOML file drives the whole pipeline. Two built-in profiles exist:
//! `paper` (140/40 runs of 600 s, 50 epochs, K = 200) and `desk`
//! (14/4 runs of 60 s, few epochs, small K) for workstation-scale
//! experiments. Every artifact written by the pipeline embeds the
//! SHA-256 hash of the canonical JSON serialization of the config that
//! produced it, so stale artifacts are never silently mixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::arch::Arch;

/// Scale profile: full experiment or a desk-scale shrink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    PaperScale,
    DeskScale,
}

/// Simulation stage settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    /// Simulated runs for the healthy class.
    pub healthy_runs: usize,
    /// Simulated runs for each of the seven fault classes.
    pub fault_runs: usize,
    /// Length of each run in seconds.
    pub duration_s: f64,
    /// Mean hub-height wind speed in m/s.
    pub mean_wind: f64,
    /// Turbulence intensity as a fraction of the mean.
    pub turbulence_intensity: f64,
    /// Base seed from which every run's wind seed is derived.
    pub base_seed: u64,
}

/// Dataset stage settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Window length in samples (network input rows).
    pub window: usize,
    /// Window stride in samples; equal to `window` means non-overlapping.
    pub stride: usize,
    /// Number of cross-validation folds.
    pub folds: usize,
    /// Seed for the fold shuffle.
    pub seed: u64,
}

/// Training stage settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Architectures to train and evaluate.
    pub archs: Vec<Arch>,
    /// Epochs per fold.
    pub epochs: usize,
    /// Mini-batch size.
    pub batch: usize,
    /// Adam learning rate.
    pub learning_rate: f64,
    /// Seed controlling init, shuffling, and dropout streams.
    pub seed: u64,
}

/// Monte-Carlo-dropout inference settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct UqConfig {
    /// Number of stochastic forward passes per window.
    pub k: usize,
    /// Seed from which per-pass dropout streams are derived.
    pub seed: u64,
}

/// Top-level pipeline configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    /// Directory that receives every artifact of the run.
    pub output_root: String,
    pub simulator: SimulatorConfig,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub uq: UqConfig,
}

impl RunConfig {
    /// Full-scale defaults: 140 healthy + 40 runs per fault, 600 s each,
    /// 50 epochs, K = 200.
    pub fn paper_scale() -> Self {
        RunConfig {
            profile: Profile::PaperScale,
            output_root: "runs/paper".into(),
            simulator: SimulatorConfig {
                healthy_runs: 140,
                fault_runs: 40,
                duration_s: 600.0,
                mean_wind: 18.2,
                turbulence_intensity: 0.10,
                base_seed: 42,
            },
            dataset: DatasetConfig {
                window: 125,
                stride: 125,
                folds: 10,
                seed: 7,
            },
            model: ModelConfig {
                archs: vec![Arch::SimpleCnn, Arch::MultiHeaded, Arch::Casu2Net],
                epochs: 50,
                batch: 32,
                learning_rate: 1e-3,
                seed: 3,
            },
            uq: UqConfig { k: 200, seed: 11 },
        }
    }

    /// Desk-scale defaults: 14 healthy + 4 runs per fault, 60 s each,
    /// a short epoch budget, and a reduced MC-dropout pass count.
    pub fn desk_scale() -> Self {
        RunConfig {
            profile: Profile::DeskScale,
            output_root: "runs/desk".into(),
            simulator: SimulatorConfig {
                healthy_runs: 14,
                fault_runs: 4,
                duration_s: 60.0,
                mean_wind: 18.2,
                turbulence_intensity: 0.10,
                base_seed: 42,
            },
            dataset: DatasetConfig {
                window: 125,
                stride: 125,
                folds: 10,
                seed: 7,
            },
            model: ModelConfig {
                archs: vec![Arch::SimpleCnn, Arch::MultiHeaded, Arch::Casu2Net],
                epochs: 8,
                batch: 32,
                learning_rate: 1e-3,
                seed: 3,
            },
            uq: UqConfig { k: 25, seed: 11 },
        }
    }

    /// Parse a TOML config file. Missing sections fall back to the named
    /// profile's defaults; `WINDFAULT_OUTPUT_ROOT` and `WINDFAULT_SEED`
    /// environment variables override the output root and the base seeds.
    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Partial {
            profile: Option<Profile>,
            output_root: Option<String>,
            simulator: Option<toml::Value>,
            dataset: Option<toml::Value>,
            model: Option<toml::Value>,
            uq: Option<toml::Value>,
        }
        let partial: Partial =
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse: {e}")))?;
        let mut cfg = match partial.profile.unwrap_or(Profile::DeskScale) {
            Profile::PaperScale => RunConfig::paper_scale(),
            Profile::DeskScale => RunConfig::desk_scale(),
        };
        if let Some(root) = partial.output_root {
            cfg.output_root = root;
        }
        fn merge<T: Serialize + for<'de> Deserialize<'de>>(
            base: &mut T,
            over: Option<toml::Value>,
            section: &str,
        ) -> Result<()> {
            let Some(over) = over else { return Ok(()) };
            let mut value = toml::Value::try_from(&*base)
                .map_err(|e| Error::Config(format!("serialize {section}: {e}")))?;
            let (toml::Value::Table(dst), toml::Value::Table(src)) = (&mut value, over) else {
                return Err(Error::Config(format!("section [{section}] must be a table")));
            };
            for (k, v) in src {
                if !dst.contains_key(&k) {
                    return Err(Error::Config(format!("unknown key '{k}' in [{section}]")));
                }
                dst.insert(k, v);
            }
            *base = value
                .try_into()
                .map_err(|e| Error::Config(format!("section [{section}]: {e}")))?;
            Ok(())
        }
        merge(&mut cfg.simulator, partial.simulator, "simulator")?;
        merge(&mut cfg.dataset, partial.dataset, "dataset")?;
        merge(&mut cfg.model, partial.model, "model")?;
        merge(&mut cfg.uq, partial.uq, "uq")?;
        cfg.apply_env_overrides();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply the two supported environment overrides.
    pub fn apply_env_overrides(&mut self) {
        if let Ok(root) = std::env::var("WINDFAULT_OUTPUT_ROOT") {
            if !root.is_empty() {
                self.output_root = root;
            }
        }
        if let Ok(seed) = std::env::var("WINDFAULT_SEED") {
            if let Ok(s) = seed.parse::<u64>() {
                self.simulator.base_seed = s;
                self.dataset.seed = s.wrapping_add(1);
                self.model.seed = s.wrapping_add(2);
                self.uq.seed = s.wrapping_add(3);
            }
        }
    }

    /// Check cross-field invariants before any stage runs.
    pub fn validate(&self) -> Result<()> {
        let c = |ok: bool, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        c(self.simulator.healthy_runs >= 1, "simulator.healthy_runs must be >= 1")?;
        c(self.simulator.fault_runs >= 1, "simulator.fault_runs must be >= 1")?;
        c(self.simulator.duration_s > 0.0, "simulator.duration_s must be > 0")?;
        c(self.simulator.mean_wind > 0.0, "simulator.mean_wind must be > 0")?;
        c(
            self.simulator.turbulence_intensity >= 0.0,
            "simulator.turbulence_intensity must be >= 0",
        )?;
        c(self.dataset.window >= 1, "dataset.window must be >= 1")?;
        c(self.dataset.stride >= 1, "dataset.stride must be >= 1")?;
        c(self.dataset.folds >= 2, "dataset.folds must be >= 2")?;
        c(!self.model.archs.is_empty(), "model.archs must not be empty")?;
        c(self.model.epochs >= 1, "model.epochs must be >= 1")?;
        c(self.model.batch >= 2, "model.batch must be >= 2")?;
        c(self.model.learning_rate > 0.0, "model.learning_rate must be > 0")?;
        c(self.uq.k >= 1, "uq.k must be >= 1")?;
        let total_runs = self.simulator.healthy_runs + 7 * self.simulator.fault_runs;
        c(
            self.dataset.folds <= total_runs,
            "dataset.folds must not exceed the total run count",
        )?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, as lowercase hex.
    pub fn content_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Lowercase-hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
