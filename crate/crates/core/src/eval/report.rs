//! Turn evaluation reports into artifacts: one machine-readable metrics
//! file, one Markdown summary, and per-classifier ROC / confusion-matrix
//! figures. Embedding scatters come from the separate visualization pass
//! (they need a checkpoint and dataset, not just report numbers), and land
//! in the same figures directory.
//!
//! The metrics file deliberately carries no wall-clock timings — it must be
//! byte-identical across reruns of the same configuration; timings go to
//! the pipeline ledger instead.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::plot::{confusion_svg, roc_svg};
use crate::turbine::FaultKind;

use super::cv::EvalReport;

/// Where everything was written.
#[derive(Debug, Clone)]
pub struct RenderedPaths {
    pub metrics: PathBuf,
    pub tables: PathBuf,
    pub figures: Vec<PathBuf>,
}

/// The scenario names, in label order, as figure axis labels.
pub fn class_names() -> Vec<&'static str> {
    FaultKind::ALL.iter().map(|k| k.as_str()).collect()
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "—".to_string(),
    }
}

fn mode_tag(report: &EvalReport) -> &'static str {
    if report.uq {
        "uq"
    } else {
        "plain"
    }
}

/// Median-accuracy fold index — the representative fold whose ROC curves
/// are drawn (pooling curves across folds would need pooled scores, which
/// reports do not retain).
fn representative_fold(report: &EvalReport) -> Option<usize> {
    if report.folds.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..report.folds.len()).collect();
    order.sort_by(|&a, &b| {
        report.folds[a]
            .metrics
            .accuracy
            .total_cmp(&report.folds[b].metrics.accuracy)
    });
    Some(order[order.len() / 2])
}

/// Render `reports` into `out_dir`: `metrics.json`, `tables.md`, and a
/// `figures/` directory. Requires at least one report.
pub fn render_reports(reports: &[EvalReport], out_dir: &Path) -> Result<RenderedPaths> {
    if reports.is_empty() {
        return Err(Error::invalid("nothing to render: no reports"));
    }
    let figures_dir = out_dir.join("figures");
    fs::create_dir_all(&figures_dir).map_err(|e| Error::io(figures_dir.display().to_string(), e))?;

    let metrics = out_dir.join("metrics.json");
    let json = serde_json::to_string_pretty(reports)
        .map_err(|e| Error::invalid(format!("cannot serialize reports: {e}")))?;
    write(&metrics, &json)?;

    let names = class_names();
    let mut figures = Vec::new();
    let mut md = String::from(
        "# Cross-validated results\n\n\
         | classifier | UQ | accuracy | precision | recall | F-score | macro AUC | run-level accuracy |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for report in reports {
        match &report.aggregate {
            Some(a) => md.push_str(&format!(
                "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {} | {:.4} |\n",
                report.model,
                if report.uq { "on" } else { "off" },
                a.accuracy,
                a.precision,
                a.recall,
                a.f_score,
                fmt_opt(a.macro_auc),
                a.run_accuracy,
            )),
            None => md.push_str(&format!(
                "| {} | {} | (all folds failed) | | | | | |\n",
                report.model,
                if report.uq { "on" } else { "off" },
            )),
        }
    }

    for report in reports {
        let tag = format!("{}-{}", report.model, mode_tag(report));
        md.push_str(&format!("\n## {} (UQ {})\n\n", report.model, if report.uq { "on" } else { "off" }));
        md.push_str(&format!("- config hash: `{}`\n", report.config_hash));
        md.push_str(&format!("- seed: {}", report.seed));
        if let Some(uq_seed) = report.uq_seed {
            md.push_str(&format!(", UQ seed: {uq_seed}"));
        }
        md.push('\n');
        if !report.failures.is_empty() {
            md.push_str("\n**Failed folds:**\n\n");
            for f in &report.failures {
                md.push_str(&format!("- fold {}: {}\n", f.fold, f.detail));
            }
        }
        if !report.folds.is_empty() {
            md.push_str(
                "\n| fold | test windows | accuracy | F-score | macro AUC | run acc | mean H (correct) | mean H (wrong) |\n\
                 |---|---|---|---|---|---|---|---|\n",
            );
            for f in &report.folds {
                md.push_str(&format!(
                    "| {} | {} | {:.4} | {:.4} | {} | {:.4} | {} | {} |\n",
                    f.fold,
                    f.n_test_windows,
                    f.metrics.accuracy,
                    f.metrics.f_score,
                    fmt_opt(f.roc.macro_auc),
                    f.run_accuracy,
                    fmt_opt(f.mean_entropy_correct),
                    fmt_opt(f.mean_entropy_incorrect),
                ));
            }
        }

        if report.confusion.total() > 0 {
            let cm_path = figures_dir.join(format!("cm-{tag}.svg"));
            let svg = confusion_svg(
                &report.confusion,
                &names,
                &format!("{} (UQ {}) — pooled over folds", report.model, if report.uq { "on" } else { "off" }),
            )?;
            write(&cm_path, &svg)?;
            figures.push(cm_path);
        }
        if let Some(fold) = representative_fold(report) {
            let f = &report.folds[fold];
            let roc_path = figures_dir.join(format!("roc-{tag}.svg"));
            let svg = roc_svg(
                &f.roc,
                &names,
                &format!("{} (UQ {}) — fold {} (median accuracy)", report.model, if report.uq { "on" } else { "off" }, f.fold),
            )?;
            write(&roc_path, &svg)?;
            figures.push(roc_path);
        }
    }

    let tables = out_dir.join("tables.md");
    write(&tables, &md)?;
    Ok(RenderedPaths {
        metrics,
        tables,
        figures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_folds, testutil::synthetic_ws};
    use crate::eval::cv::{baseline_classifiers, CvOptions, run_cv};
    use crate::nn::arch::Arch;
    use crate::nn::train::TrainOptions;
    use crate::plot::parse_confusion_cells;

    fn tiny_reports() -> Vec<EvalReport> {
        let ws = synthetic_ws(2, 3, 8);
        let plan = make_folds(&ws.runs, 2, 9).unwrap();
        let (dt, rf) = baseline_classifiers(&ws, &plan, 3, "cfg-hash").unwrap();
        vec![dt, rf]
    }

    #[test]
    fn two_models_in_two_rows_out() {
        let dir = tempfile::tempdir().unwrap();
        let reports = tiny_reports();
        let paths = render_reports(&reports, dir.path()).unwrap();
        let md = std::fs::read_to_string(&paths.tables).unwrap();
        let rows: Vec<&str> = md
            .lines()
            .filter(|l| l.starts_with("| decision-tree") || l.starts_with("| random-forest"))
            .collect();
        assert_eq!(rows.len(), 2);
        // One CM and one ROC figure per classifier.
        assert_eq!(paths.figures.len(), 4);
        for f in &paths.figures {
            assert!(f.exists());
        }
    }

    #[test]
    fn metrics_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let reports = tiny_reports();
        let paths = render_reports(&reports, dir.path()).unwrap();
        let text = std::fs::read_to_string(&paths.metrics).unwrap();
        let parsed: Vec<EvalReport> = serde_json::from_str(&text).unwrap();
        assert_eq!(
            serde_json::to_value(&parsed).unwrap(),
            serde_json::to_value(&reports).unwrap()
        );
    }

    #[test]
    fn figure_annotations_match_the_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let reports = tiny_reports();
        let paths = render_reports(&reports, dir.path()).unwrap();
        let cm_file = paths
            .figures
            .iter()
            .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("cm-decision-tree"))
            .unwrap();
        let svg = std::fs::read_to_string(cm_file).unwrap();
        let cells = parse_confusion_cells(&svg);
        assert_eq!(cells.len(), 64);
        for (t, p, count) in cells {
            assert_eq!(count, reports[0].confusion.get(t, p));
        }
    }

    #[test]
    fn deep_model_report_renders_with_uq_columns() {
        let ws = synthetic_ws(2, 3, 2);
        let plan = make_folds(&ws.runs, 2, 9).unwrap();
        let opts = CvOptions {
            train: TrainOptions {
                epochs: 1,
                batch_size: 16,
                seed: 3,
                val_fraction: 0.0,
                ..TrainOptions::default()
            },
            uq: Some(crate::uq::McOptions {
                k: 2,
                seed: 5,
                retain_passes: false,
            }),
            config_hash: "cfg".into(),
        };
        let report = run_cv(Arch::SimpleCnn, &ws, &plan, &opts).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = render_reports(&[report], dir.path()).unwrap();
        let md = std::fs::read_to_string(&paths.tables).unwrap();
        assert!(md.contains("| simple-cnn | on |"));
        assert!(md.contains("UQ seed: 5"));
    }

    #[test]
    fn write_failure_reports_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("blocker");
        std::fs::write(&blocker, "file, not dir").unwrap();
        let reports = tiny_reports();
        let err = render_reports(&reports, &blocker.join("sub")).unwrap_err();
        match err {
            Error::Io { path, .. } => assert!(path.contains("blocker")),
            other => panic!("expected Io, got {other:?}"),
        }
        assert!(render_reports(&[], dir.path()).is_err());
    }
}
