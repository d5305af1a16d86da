//! Closed-loop wind-turbine fault simulation, windowed sensor datasets,
//! hand-rolled deep classifiers with Monte-Carlo-dropout uncertainty, and a
//! cross-validated evaluation harness.
//!
//! The crate is organised as a pipeline:
//!
//! 1. [`turbine`] — simulate a 5-MW machine in closed loop under one of
//!    eight condition labels (healthy plus seven faults) and record five
//!    sensor channels at 80 Hz.
//! 2. [`dataset`] — slice recorded traces into overlapping windows,
//!    normalise per channel, and split by run into stratified folds.
//! 3. [`nn`] — a small deterministic neural-network framework (dense,
//!    convolution, batch norm, dropout, ConvLSTM) with Adam and
//!    softmax-cross-entropy training.
//! 4. [`uq`] — Monte-Carlo-dropout inference: repeated stochastic forward
//!    passes aggregated into mean probabilities and dispersion measures.
//! 5. [`eval`] — k-fold cross-validation, classification metrics, ROC/AUC,
//!    decision-tree and random-forest baselines, and t-SNE embeddings.
//! 6. [`pipeline`] — stage orchestration with content-hash skipping, plus
//!    the progress/ledger formats used by the command-line front end.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod turbine;
pub mod uq;

pub use error::{Error, Result};
