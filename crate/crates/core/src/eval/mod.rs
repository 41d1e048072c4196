//! Leave-one-person-out folds, ranking metrics and pooled reports.

mod metrics;
mod report;

pub use metrics::{compute_average_precision, compute_roc_auc, roc_curve};
pub use report::{pooled_report, MetricReport, ParticipantMetrics};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, DatasetTag};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("leave-one-person-out needs at least 2 primary participants, found {0}")]
    TooFewParticipants(usize),
    #[error("no scores for the test participant of fold {0}")]
    MissingFold(String),
    #[error("scores given for {0}, which is not the test participant of any fold")]
    UnexpectedSeries(String),
}

/// One cross-validation split. The test participant always comes from the
/// primary (sedation) dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test_participant: String,
    pub train_participants: Vec<String>,
    pub auxiliary_train_sources: Vec<DatasetTag>,
}

/// One fold per primary participant. `aux_sources` join every fold's
/// training side. With `include_primary` off (cross-dataset mode) the primary
/// training sets are empty and the folds only serve to split the test data.
pub fn make_lopo_folds(
    manifest: &DatasetManifest,
    aux_sources: &[DatasetTag],
    include_primary: bool,
) -> Result<Vec<Fold>, EvalError> {
    let primary = manifest.ids_with_tag(DatasetTag::Sedation);
    if primary.len() < 2 {
        return Err(EvalError::TooFewParticipants(primary.len()));
    }
    let mut aux: Vec<DatasetTag> = aux_sources
        .iter()
        .copied()
        .filter(|t| *t != DatasetTag::Sedation)
        .collect();
    aux.sort();
    aux.dedup();
    Ok(primary
        .iter()
        .map(|test| Fold {
            test_participant: test.clone(),
            train_participants: if include_primary {
                primary.iter().filter(|p| *p != test).cloned().collect()
            } else {
                Vec::new()
            },
            auxiliary_train_sources: aux.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_manifest;
    use std::collections::HashSet;
    use std::path::Path;

    fn manifest(n: usize, n_external: usize) -> DatasetManifest {
        let mut lines = Vec::new();
        for i in 0..n {
            lines.push(format!(
                r#"{{"id":"S{i:02}","fps":30,"frames_dir":"f","landmarks":"l.csv","landmark_schema":"dense_mesh","label_intervals":[{{"start_ms":0,"end_ms":100,"rating":"pain"}}]}}"#
            ));
        }
        for i in 0..n_external {
            lines.push(format!(
                r#"{{"id":"U{i:02}","fps":30,"dataset":"external_au_coded","frames_dir":"f","landmarks":"l.csv","landmark_schema":"sparse68","au_file":"a.csv"}}"#
            ));
        }
        parse_manifest(&lines.join("\n"), Path::new("m"), Path::new(".")).unwrap()
    }

    #[test]
    fn fourteen_participants_fourteen_folds() {
        assert_eq!(make_lopo_folds(&manifest(14, 0), &[], true).unwrap().len(), 14);
    }

    #[test]
    fn two_participants_train_on_each_other() {
        let folds = make_lopo_folds(&manifest(2, 0), &[], true).unwrap();
        assert_eq!(folds[0].train_participants, vec!["S01".to_string()]);
        assert_eq!(folds[1].train_participants, vec!["S00".to_string()]);
    }

    #[test]
    fn too_few() {
        assert!(matches!(
            make_lopo_folds(&manifest(1, 3), &[], true),
            Err(EvalError::TooFewParticipants(1))
        ));
    }

    #[test]
    fn cross_dataset_mode_has_empty_primary_training() {
        let folds = make_lopo_folds(&manifest(3, 2), &[DatasetTag::ExternalAuCoded], false).unwrap();
        assert_eq!(folds.len(), 3);
        for f in &folds {
            assert!(f.train_participants.is_empty());
            assert_eq!(f.auxiliary_train_sources, vec![DatasetTag::ExternalAuCoded]);
            assert!(f.test_participant.starts_with('S'));
        }
    }

    #[test]
    fn partition_invariants() {
        for n in 2..=20 {
            let m = manifest(n, 2);
            let folds = make_lopo_folds(&m, &[DatasetTag::ExternalAuCoded], true).unwrap();
            let tests: HashSet<&str> = folds.iter().map(|f| f.test_participant.as_str()).collect();
            assert_eq!(tests.len(), n);
            let primary: HashSet<String> = m.ids_with_tag(DatasetTag::Sedation).into_iter().collect();
            for f in &folds {
                assert!(!f.train_participants.contains(&f.test_participant));
                let mut all: HashSet<String> = f.train_participants.iter().cloned().collect();
                all.insert(f.test_participant.clone());
                assert_eq!(all, primary);
            }
        }
    }
}
