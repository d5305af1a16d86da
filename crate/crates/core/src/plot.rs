//! Deterministic SVG figures, built as plain strings: ROC curves, annotated
//! confusion-matrix heatmaps, embedding scatters, and entropy histograms.
//! No drawing dependency — every figure is a small standalone text file,
//! and the confusion-matrix cells carry machine-readable `data-cell`
//! attributes so rendered numbers can be checked against the matrix.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::eval::metrics::ConfusionMatrix;
use crate::eval::roc::MulticlassRoc;
use crate::uq::UncertaintyReport;

/// One distinguishable color per class, reused across every figure.
pub const CLASS_COLORS: [&str; 8] = [
    "#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb", "#000000",
];

fn svg_open(width: usize, height: usize) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    )
}

/// One-vs-rest ROC curves with per-class AUC in the legend. Classes absent
/// from the test set (no curve) are listed as undefined.
pub fn roc_svg(roc: &MulticlassRoc, class_names: &[&str], title: &str) -> Result<String> {
    if class_names.len() != roc.per_class.len() {
        return Err(Error::invalid(format!(
            "{} class names for {} curves",
            class_names.len(),
            roc.per_class.len()
        )));
    }
    let (w, h, m) = (560usize, 420usize, 50.0f64);
    let (pw, ph) = (w as f64 - m - 170.0, h as f64 - 2.0 * m);
    let x = |fpr: f64| m + fpr * pw;
    let y = |tpr: f64| h as f64 - m - tpr * ph;
    let mut s = svg_open(w, h);
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-size=\"13\" text-anchor=\"middle\">{title}</text>\n",
        m + pw / 2.0
    ));
    s.push_str(&format!(
        "<rect x=\"{m}\" y=\"{}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#333\"/>\n",
        m
    ));
    s.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n",
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    ));
    for (tick, label) in [(0.0, "0"), (0.5, "0.5"), (1.0, "1")] {
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{label}</text>\n",
            x(tick),
            h as f64 - m + 16.0
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{label}</text>\n",
            m - 6.0,
            y(tick) + 4.0
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">false positive rate</text>\n",
        m + pw / 2.0,
        h as f64 - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 14 {})\">true positive rate</text>\n",
        m + ph / 2.0,
        m + ph / 2.0
    ));
    let legend_x = m + pw + 14.0;
    for (c, curve) in roc.per_class.iter().enumerate() {
        let color = CLASS_COLORS[c % CLASS_COLORS.len()];
        let ly = m + 16.0 * c as f64;
        match curve {
            Some(rc) => {
                let pts: Vec<String> = rc
                    .points
                    .iter()
                    .map(|&(fpr, tpr)| format!("{:.2},{:.2}", x(fpr), y(tpr)))
                    .collect();
                s.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                    pts.join(" ")
                ));
                s.push_str(&format!(
                    "<text x=\"{legend_x}\" y=\"{ly}\" font-size=\"11\" fill=\"{color}\">{} AUC {:.3}</text>\n",
                    class_names[c], rc.auc
                ));
            }
            None => {
                s.push_str(&format!(
                    "<text x=\"{legend_x}\" y=\"{ly}\" font-size=\"11\" fill=\"#999\">{} (absent)</text>\n",
                    class_names[c]
                ));
            }
        }
    }
    if let Some(macro_auc) = roc.macro_auc {
        s.push_str(&format!(
            "<text x=\"{legend_x}\" y=\"{}\" font-size=\"11\" font-weight=\"bold\">macro AUC {macro_auc:.3}</text>\n",
            m + 16.0 * roc.per_class.len() as f64 + 8.0
        ));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Heatmap of the confusion matrix. Every cell carries its count both as
/// visible text and as a `data-cell="true,pred,count"` attribute.
pub fn confusion_svg(cm: &ConfusionMatrix, class_names: &[&str], title: &str) -> Result<String> {
    let n = cm.n_classes;
    if class_names.len() != n {
        return Err(Error::invalid(format!(
            "{} class names for {n} classes",
            class_names.len()
        )));
    }
    let cell = 52.0f64;
    let m = 70.0f64;
    let (w, h) = (m + cell * n as f64 + 20.0, m + cell * n as f64 + 40.0);
    let mut s = svg_open(w as usize, h as usize);
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{title}</text>\n",
        m + cell * n as f64 / 2.0,
        m + cell * n as f64 + 28.0
    ));
    let max = cm.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    for t in 0..n {
        for p in 0..n {
            let count = cm.get(t, p);
            // White → class color ramp on the diagonal axis; off-diagonal
            // cells ramp toward grey so errors read differently.
            let frac = count as f64 / max;
            let (r, g, b) = if t == p {
                (
                    (255.0 - frac * 187.0) as u8,
                    (255.0 - frac * 136.0) as u8,
                    (255.0 - frac * 85.0) as u8,
                )
            } else {
                let v = (255.0 - frac * 180.0) as u8;
                (255, v, v)
            };
            let cx = m + p as f64 * cell;
            let cy = m + t as f64 * cell;
            s.push_str(&format!(
                "<rect x=\"{cx}\" y=\"{cy}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"rgb({r},{g},{b})\" stroke=\"#ddd\"/>\n"
            ));
            let dark = frac > 0.55;
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" \
                 fill=\"{}\" data-cell=\"{t},{p},{count}\">{count}</text>\n",
                cx + cell / 2.0,
                cy + cell / 2.0 + 4.0,
                if dark { "white" } else { "#222" }
            ));
        }
    }
    for (i, name) in class_names.iter().enumerate() {
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{name}</text>\n",
            m + i as f64 * cell + cell / 2.0,
            m - 8.0
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{name}</text>\n",
            m - 8.0,
            m + i as f64 * cell + cell / 2.0 + 4.0
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"18\" font-size=\"12\" text-anchor=\"middle\">predicted</text>\n",
        m + cell * n as f64 / 2.0
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{0}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {0})\">true</text>\n",
        m + cell * n as f64 / 2.0
    ));
    s.push_str("</svg>\n");
    Ok(s)
}

/// Parse the `data-cell` annotations back out of a confusion-matrix SVG.
/// This is the verification hook: rendered numbers must equal the matrix.
pub fn parse_confusion_cells(svg: &str) -> Vec<(usize, usize, u64)> {
    let mut cells = Vec::new();
    for chunk in svg.split("data-cell=\"").skip(1) {
        if let Some(end) = chunk.find('"') {
            let mut it = chunk[..end].split(',');
            if let (Some(t), Some(p), Some(c)) = (it.next(), it.next(), it.next()) {
                if let (Ok(t), Ok(p), Ok(c)) = (t.parse(), p.parse(), c.parse()) {
                    cells.push((t, p, c));
                }
            }
        }
    }
    cells
}

/// Scatter of a 2-D embedding, one dot per row colored by class. Embedding
/// axes carry no meaning, so the frame is drawn without ticks.
pub fn scatter_svg(
    points: &ArrayView2<'_, f64>,
    labels: &[u8],
    class_names: &[&str],
    title: &str,
) -> Result<String> {
    let n = points.dim().0;
    if points.dim().1 != 2 {
        return Err(Error::invalid("scatter expects N×2 points"));
    }
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{n} points vs {} labels",
            labels.len()
        )));
    }
    let (w, h, m) = (560usize, 460usize, 40.0f64);
    let (pw, ph) = (w as f64 - m - 130.0, h as f64 - 2.0 * m);
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for r in points.outer_iter() {
        xmin = xmin.min(r[0]);
        xmax = xmax.max(r[0]);
        ymin = ymin.min(r[1]);
        ymax = ymax.max(r[1]);
    }
    let xspan = (xmax - xmin).max(1e-9);
    let yspan = (ymax - ymin).max(1e-9);
    let mut s = svg_open(w, h);
    s.push_str(&format!(
        "<text x=\"{}\" y=\"22\" font-size=\"13\" text-anchor=\"middle\">{title}</text>\n",
        m + pw / 2.0
    ));
    s.push_str(&format!(
        "<rect x=\"{m}\" y=\"{m}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#333\"/>\n"
    ));
    for (r, &label) in points.outer_iter().zip(labels) {
        let cx = m + (r[0] - xmin) / xspan * (pw - 12.0) + 6.0;
        let cy = m + ph - ((r[1] - ymin) / yspan * (ph - 12.0) + 6.0);
        s.push_str(&format!(
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.75\"/>\n",
            CLASS_COLORS[label as usize % CLASS_COLORS.len()]
        ));
    }
    let legend_x = m + pw + 12.0;
    for (c, name) in class_names.iter().enumerate() {
        let ly = m + 16.0 * c as f64 + 8.0;
        s.push_str(&format!(
            "<circle cx=\"{legend_x}\" cy=\"{}\" r=\"4\" fill=\"{}\"/>\n",
            ly - 4.0,
            CLASS_COLORS[c % CLASS_COLORS.len()]
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{ly}\" font-size=\"11\">{name}</text>\n",
            legend_x + 10.0
        ));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Side-by-side entropy histogram for correct vs incorrect predictions.
pub fn entropy_histogram_svg(report: &UncertaintyReport) -> Result<String> {
    let bins = report.correct.len();
    if bins == 0 || report.incorrect.len() != bins || report.edges.len() != bins + 1 {
        return Err(Error::invalid("histogram arrays disagree on bin count"));
    }
    let (w, h, m) = (560usize, 360usize, 50.0f64);
    let (pw, ph) = (w as f64 - 2.0 * m, h as f64 - 2.0 * m);
    let maxc = report
        .correct
        .iter()
        .chain(&report.incorrect)
        .copied()
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let mut s = svg_open(w, h);
    let bw = pw / bins as f64;
    for (i, (&c, &ic)) in report.correct.iter().zip(&report.incorrect).enumerate() {
        let x0 = m + i as f64 * bw;
        for (k, (count, color)) in [(c, "#4477aa"), (ic, "#ee6677")].iter().enumerate() {
            let bh = *count as f64 / maxc * ph;
            s.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" \
                 fill-opacity=\"0.85\"/>\n",
                x0 + k as f64 * bw / 2.0 + 1.0,
                m + ph - bh,
                bw / 2.0 - 2.0,
                bh
            ));
        }
    }
    s.push_str(&format!(
        "<rect x=\"{m}\" y=\"{m}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#333\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">predictive entropy (nats)</text>\n",
        m + pw / 2.0,
        h as f64 - 14.0
    ));
    for (i, label) in [(0, "0"), (bins, "ln 8")] {
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{label}</text>\n",
            m + i as f64 * bw,
            m + ph + 16.0
        ));
    }
    s.push_str(&format!(
        "<rect x=\"{m}\" y=\"16\" width=\"10\" height=\"10\" fill=\"#4477aa\"/>\
         <text x=\"{}\" y=\"25\" font-size=\"11\">correct ({})</text>\n",
        m + 14.0,
        report.n_correct
    ));
    s.push_str(&format!(
        "<rect x=\"{}\" y=\"16\" width=\"10\" height=\"10\" fill=\"#ee6677\"/>\
         <text x=\"{}\" y=\"25\" font-size=\"11\">incorrect ({})</text>\n",
        m + 120.0,
        m + 134.0,
        report.n_incorrect
    ));
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::roc::per_class_roc;
    use ndarray::array;

    #[test]
    fn confusion_cells_round_trip() {
        let cm = ConfusionMatrix::from_labels(
            &[0, 0, 1, 1, 2, 2, 2],
            &[0, 1, 1, 1, 2, 0, 2],
            3,
        )
        .unwrap();
        let svg = confusion_svg(&cm, &["healthy", "f1", "f2"], "pooled confusion").unwrap();
        let cells = parse_confusion_cells(&svg);
        assert_eq!(cells.len(), 9);
        for (t, p, count) in cells {
            assert_eq!(count, cm.get(t, p), "cell ({t},{p})");
        }
        assert!(svg.contains("healthy"));
    }

    #[test]
    fn roc_figure_lists_absent_classes() {
        let truth = [0u8, 0, 1, 1];
        let probs: Vec<Vec<f64>> = vec![
            vec![0.9, 0.1, 0.0],
            vec![0.8, 0.2, 0.0],
            vec![0.3, 0.7, 0.0],
            vec![0.1, 0.9, 0.0],
        ];
        let roc = per_class_roc(&truth, &probs, 3).unwrap();
        let svg = roc_svg(&roc, &["a", "b", "c"], "one-vs-rest ROC").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("c (absent)"));
        assert!(svg.contains("macro AUC"));
        assert!(roc_svg(&roc, &["a", "b"], "t").is_err());
    }

    #[test]
    fn scatter_draws_every_point() {
        let pts = array![[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5], [3.0, -2.0]];
        let svg = scatter_svg(&pts.view(), &[0, 1, 0, 2], &["a", "b", "c"], "embedding").unwrap();
        // 4 data circles + 3 legend swatches.
        assert_eq!(svg.matches("<circle").count(), 7);
        assert!(scatter_svg(&pts.view(), &[0, 1], &["a"], "t").is_err());
    }

    #[test]
    fn entropy_histogram_shows_both_groups() {
        let report = UncertaintyReport {
            n_correct: 5,
            n_incorrect: 2,
            mean_entropy_correct: Some(0.3),
            mean_entropy_incorrect: Some(1.1),
            edges: vec![0.0, 0.5, 1.0, 1.5, 2.0, f64::ln(8.0)],
            correct: vec![3, 2, 0, 0, 0],
            incorrect: vec![0, 0, 1, 1, 0],
        };
        let svg = entropy_histogram_svg(&report).unwrap();
        assert!(svg.contains("correct (5)"));
        assert!(svg.contains("incorrect (2)"));
        // One rect pair per bin plus frame, background and two legend swatches.
        assert_eq!(svg.matches("<rect").count(), 5 * 2 + 4);
    }
}
