//! Static SVG figures: pooled ROC curves and per-participant timelines.
//! Output depends only on the inputs, so reruns produce identical files.

use std::fmt::Write as _;

use super::ExperimentError;
use crate::eval::{compute_roc_auc, roc_curve};
use crate::smoothing::ScoreSeries;
use crate::PainLabel;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Pooled frames of one experiment.
pub struct RocInput<'a> {
    pub name: &'a str,
    pub scores: &'a [f64],
    pub labels: &'a [bool],
}

/// One curve per input, chance diagonal, AUC in the legend.
pub fn roc_svg(inputs: &[RocInput<'_>]) -> Result<String, ExperimentError> {
    let (w, h, m) = (480.0, 480.0, 60.0);
    let side = w - 2.0 * m;
    let px = |fpr: f64| m + fpr * side;
    let py = |tpr: f64| h - m - tpr * side;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{side}" height="{side}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#,
            px(v),
            h - m + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            m - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">False positive rate</text>"#,
        w / 2.0,
        h - 18.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">True positive rate</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for (k, input) in inputs.iter().enumerate() {
        let curve = roc_curve(input.scores, input.labels).ok_or(ExperimentError::SingleClass)?;
        let auc = compute_roc_auc(input.scores, input.labels).ok_or(ExperimentError::SingleClass)?;
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for (fpr, tpr) in &curve {
            let _ = write!(pts, "{:.2},{:.2} ", px(*fpr), py(*tpr));
        }
        let _ = writeln!(
            s,
            r#"<polyline class="roc" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.trim_end()
        );
        let ly = m + 20.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            w - m - 150.0,
            w - m - 130.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{} (AUC {auc:.3})</text>"#,
            w - m - 125.0,
            ly + 4.0,
            escape(input.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn label_color(l: PainLabel) -> &'static str {
    match l {
        PainLabel::NoPain => "#6aa84f",
        PainLabel::Pain => "#cc4125",
        PainLabel::Excluded => "#cccccc",
    }
}

/// Stacked rows: ground-truth band on top, then one score trace per model.
/// Every model series must cover the same frames as `truth`. Traces are
/// scaled to their own min/max, so margins and probabilities share a plot.
pub fn timeline_svg(participant: &str, truth: &ScoreSeries, models: &[(&str, &ScoreSeries)]) -> Result<String, ExperimentError> {
    let frames: Vec<u32> = truth.entries.iter().map(|e| e.frame_index).collect();
    for (name, series) in models {
        if series.entries.len() != frames.len() || series.entries.iter().zip(&frames).any(|(e, f)| e.frame_index != *f) {
            return Err(ExperimentError::Misaligned(format!(
                "{name} does not cover the frames of {participant}"
            )));
        }
    }
    let (w, row_h, left, top) = (900.0, 60.0, 110.0, 30.0);
    let plot_w = w - left - 20.0;
    let rows = 1 + models.len();
    let h = top + rows as f64 * (row_h + 10.0) + 30.0;
    let n = frames.len().max(1);
    let x_of = |i: usize| left + plot_w * i as f64 / n as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="18">{}</text>"#, escape(participant));

    let _ = writeln!(s, r#"<g class="row" data-name="truth">"#);
    let _ = writeln!(s, r#"<text x="6" y="{:.1}">ground truth</text>"#, top + row_h / 2.0 + 4.0);
    let mut start = 0;
    for i in 1..=truth.entries.len() {
        if i == truth.entries.len() || truth.entries[i].label != truth.entries[start].label {
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{top:.1}" width="{:.2}" height="{row_h:.1}" fill="{}"/>"#,
                x_of(start),
                x_of(i) - x_of(start),
                label_color(truth.entries[start].label)
            );
            start = i;
        }
    }
    s.push_str("</g>\n");

    for (k, (name, series)) in models.iter().enumerate() {
        let y0 = top + (k + 1) as f64 * (row_h + 10.0);
        let (lo, hi) = series
            .entries
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), e| (a.min(e.score), b.max(e.score)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut pts = String::new();
        for (i, e) in series.entries.iter().enumerate() {
            let y = y0 + row_h - row_h * (e.score - lo) / span;
            let _ = write!(pts, "{:.2},{:.2} ", x_of(i), y);
        }
        let _ = writeln!(s, r#"<g class="row" data-name="{}">"#, escape(name));
        let _ = writeln!(
            s,
            r##"<rect x="{left}" y="{y0:.1}" width="{plot_w}" height="{row_h}" fill="none" stroke="#ddd"/>"##
        );
        let _ = writeln!(s, r#"<text x="6" y="{:.1}">{}</text>"#, y0 + row_h / 2.0 + 4.0, escape(name));
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1" points="{}"/>"#,
            PALETTE[k % PALETTE.len()],
            pts.trim_end()
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok(s)
}
