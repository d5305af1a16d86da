//! Scoring and comparison: confusion matrices and derived metrics, ROC/AUC,
//! classical tree baselines, cross-validated evaluation of the deep models,
//! t-SNE embeddings of fused features, and report rendering.

pub mod metrics;
pub mod roc;
pub mod trees;
pub mod cv;
pub mod report;
pub mod tsne;
