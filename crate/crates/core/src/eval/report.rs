use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{compute_average_precision, compute_roc_auc, EvalError, Fold};
use crate::smoothing::ScoreSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantMetrics {
    /// `None` when the frames hold only one class.
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    /// Non-excluded frames.
    pub n_frames: usize,
    pub pain_pct: f64,
}

impl ParticipantMetrics {
    fn from_frames(scores: &[f64], labels: &[bool]) -> Self {
        let pain = labels.iter().filter(|&&l| l).count();
        Self {
            auc: compute_roc_auc(scores, labels),
            ap: compute_average_precision(scores, labels).filter(|_| pain < labels.len()),
            n_frames: labels.len(),
            pain_pct: if labels.is_empty() {
                0.0
            } else {
                100.0 * pain as f64 / labels.len() as f64
            },
        }
    }
}

/// Per-participant and pooled AUC/AP of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub experiment_id: String,
    pub smoothed: bool,
    pub per_participant: BTreeMap<String, ParticipantMetrics>,
    pub pooled: ParticipantMetrics,
}

/// Per-participant metrics on each test participant's own frames, pooled
/// metrics on the concatenation of every fold's test frames (including
/// participants whose own metrics are undefined).
pub fn pooled_report(
    experiment_id: &str,
    folds: &[Fold],
    series: &[ScoreSeries],
    smoothed: bool,
) -> Result<MetricReport, EvalError> {
    let by_id: BTreeMap<&str, &ScoreSeries> =
        series.iter().map(|s| (s.participant_id.as_str(), s)).collect();
    for s in series {
        if !folds.iter().any(|f| f.test_participant == s.participant_id) {
            return Err(EvalError::UnexpectedSeries(s.participant_id.clone()));
        }
    }
    let mut per_participant = BTreeMap::new();
    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    for fold in folds {
        let s = by_id
            .get(fold.test_participant.as_str())
            .ok_or_else(|| EvalError::MissingFold(fold.test_participant.clone()))?;
        let (scores, labels) = s.labeled();
        per_participant.insert(
            fold.test_participant.clone(),
            ParticipantMetrics::from_frames(&scores, &labels),
        );
        all_scores.extend(scores);
        all_labels.extend(labels);
    }
    Ok(MetricReport {
        experiment_id: experiment_id.to_string(),
        smoothed,
        per_participant,
        pooled: ParticipantMetrics::from_frames(&all_scores, &all_labels),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "--".to_string())
}

impl MetricReport {
    /// Markdown table: participant, AUC, AP, frame count (% pain), totals.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# {} ({})\n",
            self.experiment_id,
            if self.smoothed { "smoothed" } else { "raw" }
        );
        let _ = writeln!(out, "| Participant | AUC | AP | Number of frames (% Pain) |");
        let _ = writeln!(out, "|---|---|---|---|");
        let row = |out: &mut String, name: &str, m: &ParticipantMetrics| {
            let _ = writeln!(
                out,
                "| {name} | {} | {} | {} ({:.2}) |",
                cell(m.auc),
                cell(m.ap),
                m.n_frames,
                m.pain_pct
            );
        };
        for (id, m) in &self.per_participant {
            row(&mut out, id, m);
        }
        row(&mut out, "Total", &self.pooled);
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PainLabel;
    use crate::smoothing::ScoreEntry;

    fn series(id: &str, rows: &[(f64, PainLabel)]) -> ScoreSeries {
        ScoreSeries {
            participant_id: id.into(),
            fps: 30,
            entries: rows
                .iter()
                .enumerate()
                .map(|(i, &(score, label))| ScoreEntry {
                    frame_index: i as u32,
                    timestamp_ms: i as f64 * 100.0 / 3.0,
                    score,
                    label,
                })
                .collect(),
            window: None,
        }
    }

    fn fold(id: &str) -> Fold {
        Fold {
            test_participant: id.into(),
            train_participants: vec![],
            auxiliary_train_sources: vec![],
        }
    }

    #[test]
    fn pooled_differs_from_per_fold() {
        use PainLabel::*;
        let a = series("A", &[(0.6, Pain), (0.4, NoPain)]);
        let b = series("B", &[(0.9, Pain), (0.7, NoPain)]);
        let r = pooled_report("x", &[fold("A"), fold("B")], &[a, b], false).unwrap();
        assert_eq!(r.per_participant["A"].auc, Some(1.0));
        assert_eq!(r.per_participant["B"].auc, Some(1.0));
        // pairs: 0.6>0.4, 0.6<0.7, 0.9>0.4, 0.9>0.7 -> 3/4
        assert_eq!(r.pooled.auc, Some(0.75));
    }

    #[test]
    fn zero_pain_participant_is_undefined_but_pooled() {
        use PainLabel::*;
        let a = series("A", &[(0.6, Pain), (0.4, NoPain), (0.2, Excluded)]);
        let z = series("Z", &[(0.8, NoPain), (0.1, NoPain)]);
        let with = pooled_report("x", &[fold("A"), fold("Z")], &[a.clone(), z], true).unwrap();
        let without = pooled_report("x", &[fold("A")], &[a], true).unwrap();
        assert_eq!(with.per_participant["Z"].auc, None);
        assert_eq!(with.per_participant["Z"].ap, None);
        assert_eq!(with.per_participant["A"].n_frames, 2);
        assert_ne!(with.pooled.auc, without.pooled.auc);
        let md = with.to_markdown();
        assert!(md.contains("| Z | -- | -- | 2 (0.00) |"), "{md}");
        assert!(md.contains("| Participant | AUC | AP | Number of frames (% Pain) |"));
    }

    #[test]
    fn missing_fold() {
        let r = pooled_report("x", &[fold("A")], &[], false);
        assert!(matches!(r, Err(EvalError::MissingFold(_))));
    }

    #[test]
    fn json_round_trip() {
        use PainLabel::*;
        let a = series("A", &[(0.6, Pain), (0.4, NoPain)]);
        let r = pooled_report("x", &[fold("A")], &[a], false).unwrap();
        assert_eq!(MetricReport::from_json(&r.to_json()).unwrap(), r);
    }
}
