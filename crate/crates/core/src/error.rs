use thiserror::Error;

/// Errors produced by the simulation, dataset, model, and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The closed-loop integration produced a non-finite or non-physical state.
    #[error("simulation diverged in run {run_id} at t = {t:.4} s: {detail}")]
    SimulationDiverged {
        run_id: String,
        t: f64,
        detail: String,
    },

    /// Tensor shapes do not match the operation's contract.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// Training aborted because the loss became non-finite.
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// A persisted artifact failed its integrity check.
    #[error("corrupt artifact {path}: {detail}")]
    CorruptArtifact { path: String, detail: String },

    /// A referenced run or file is missing from the corpus.
    #[error("missing trace for run {run_id}: {path}")]
    MissingTrace { run_id: String, path: String },

    /// Features are degenerate for the requested embedding.
    #[error("degenerate features: {0}")]
    Degenerate(String),

    /// A pipeline stage failed; the stage name is preserved for exit reporting.
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
