use std::path::{Path, PathBuf};

use super::{
    read_au_file, AuRow, DatasetError, DatasetManifest, DatasetTag, ExclusionInterval,
    FrameRecord, LabelInterval, LabelSource, PainLabel, ParticipantEntry,
};
use crate::pspi::{binarize_pspi, compute_pspi, BinarizationPolicy};

/// Frame images of one participant, indexed by frame number.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDir {
    pub paths: Vec<PathBuf>,
}

impl FrameDir {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Lists frame images named by (zero-padded) frame index. Indices must be
/// contiguous from zero.
pub fn scan_frame_dir(dir: &Path, participant: &str) -> Result<FrameDir, DatasetError> {
    let entries = std::fs::read_dir(dir).map_err(|e| DatasetError::io(dir, e))?;
    let mut indexed = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| DatasetError::io(dir, e))?.path();
        let ext_ok = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if !ext_ok {
            continue;
        }
        let Some(index) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse::<u32>().ok())
        else {
            continue;
        };
        indexed.push((index, path));
    }
    if indexed.is_empty() {
        return Err(DatasetError::MissingFrames {
            participant: participant.to_string(),
            dir: dir.to_path_buf(),
        });
    }
    indexed.sort();
    for (expected, (index, _)) in indexed.iter().enumerate() {
        if *index as usize != expected {
            return Err(DatasetError::FrameGap {
                dir: dir.to_path_buf(),
                index: expected as u32,
            });
        }
    }
    Ok(FrameDir {
        paths: indexed.into_iter().map(|(_, p)| p).collect(),
    })
}

/// Presentation time of a frame in milliseconds from the start of the video.
pub fn frame_timestamp_ms(frame_index: u32, fps: u32) -> f64 {
    frame_index as f64 * 1000.0 / fps as f64
}

/// Interval labeling: a frame takes the rating of the interval containing its
/// timestamp, and is excluded when no interval covers it or when any
/// exclusion segment overlaps its display span.
pub fn label_frames_from_intervals(
    fps: u32,
    intervals: &[LabelInterval],
    exclusions: &[ExclusionInterval],
    n_frames: usize,
) -> Vec<PainLabel> {
    let mut sorted = intervals.to_vec();
    sorted.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms));
    (0..n_frames as u32)
        .map(|i| {
            let t0 = frame_timestamp_ms(i, fps);
            let t1 = frame_timestamp_ms(i + 1, fps);
            if exclusions.iter().any(|ex| ex.overlaps(t0, t1)) {
                return PainLabel::Excluded;
            }
            // last interval starting at or before t0
            let pos = sorted.partition_point(|iv| iv.start_ms <= t0);
            match pos.checked_sub(1).map(|k| &sorted[k]) {
                Some(iv) if iv.contains(t0) => iv.rating.into(),
                _ => PainLabel::Excluded,
            }
        })
        .collect()
}

/// AU labeling: each row's PSPI score binarized under `policy`. Rows must
/// cover frames `0..n_frames` exactly once.
pub fn label_frames_from_aus(
    rows: &[AuRow],
    n_frames: usize,
    policy: BinarizationPolicy,
    participant: &str,
) -> Result<Vec<PainLabel>, DatasetError> {
    let fail = |message: String| DatasetError::LabelSource {
        participant: participant.to_string(),
        message,
    };
    if rows.len() != n_frames {
        return Err(fail(format!(
            "AU file has {} rows but {n_frames} frames were found",
            rows.len()
        )));
    }
    let mut labels = vec![None; n_frames];
    for row in rows {
        let slot = labels
            .get_mut(row.frame_index as usize)
            .ok_or_else(|| fail(format!("AU row for frame {} beyond frame count", row.frame_index)))?;
        if slot.is_some() {
            return Err(fail(format!("duplicate AU row for frame {}", row.frame_index)));
        }
        *slot = Some(binarize_pspi(compute_pspi(&row.aus)?, policy)?);
    }
    Ok(labels.into_iter().map(|l| l.expect("all slots filled")).collect())
}

/// Label resolution as a pure function of the manifest entry, the frame
/// count and (for AU-coded participants) the parsed AU rows.
pub fn resolve_frame_labels_with_count(
    entry: &ParticipantEntry,
    n_frames: usize,
    au_rows: Option<&[AuRow]>,
    policy: BinarizationPolicy,
) -> Result<Vec<FrameRecord>, DatasetError> {
    let id = entry.id();
    if n_frames == 0 {
        return Err(DatasetError::MissingFrames {
            participant: id.to_string(),
            dir: entry.frames_dir.clone(),
        });
    }
    let (labels, source) = match entry.meta.dataset_tag {
        DatasetTag::Sedation => (
            label_frames_from_intervals(
                entry.meta.fps,
                &entry.label_intervals,
                &entry.exclusions,
                n_frames,
            ),
            LabelSource::NurseInterval,
        ),
        DatasetTag::ExternalAuCoded => {
            let rows = au_rows.ok_or_else(|| DatasetError::LabelSource {
                participant: id.to_string(),
                message: "AU rows required for an AU-coded participant".into(),
            })?;
            let mut labels = label_frames_from_aus(rows, n_frames, policy, id)?;
            // Exclusion segments still apply to AU-coded recordings.
            for (i, l) in labels.iter_mut().enumerate() {
                let t0 = frame_timestamp_ms(i as u32, entry.meta.fps);
                let t1 = frame_timestamp_ms(i as u32 + 1, entry.meta.fps);
                if entry.exclusions.iter().any(|ex| ex.overlaps(t0, t1)) {
                    *l = PainLabel::Excluded;
                }
            }
            (labels, LabelSource::AuCoded)
        }
    };
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| FrameRecord {
            participant_id: id.to_string(),
            frame_index: i as u32,
            timestamp_ms: frame_timestamp_ms(i as u32, entry.meta.fps),
            label,
            source,
            image_ref: PathBuf::new(),
            landmark_ref: Some(entry.landmarks.clone()),
        })
        .collect())
}

/// Resolves per-frame labels for one participant, reading the frame
/// directory (and AU file, where applicable).
pub fn resolve_frame_labels(
    manifest: &DatasetManifest,
    participant_id: &str,
    policy: BinarizationPolicy,
) -> Result<Vec<FrameRecord>, DatasetError> {
    let entry = manifest
        .participant(participant_id)
        .ok_or_else(|| DatasetError::UnknownParticipant(participant_id.to_string()))?;
    let frames = scan_frame_dir(&entry.frames_dir, participant_id)?;
    let au_rows = match &entry.au_file {
        Some(path) => Some(read_au_file(path, participant_id)?),
        None => None,
    };
    let mut records =
        resolve_frame_labels_with_count(entry, frames.len(), au_rows.as_deref(), policy)?;
    for (rec, path) in records.iter_mut().zip(frames.paths) {
        rec.image_ref = path;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ParticipantMeta, Rating};
    use crate::preprocess::LandmarkSchema;
    use crate::pspi::ActionUnitVector;

    fn entry(fps: u32, intervals: Vec<LabelInterval>, exclusions: Vec<ExclusionInterval>) -> ParticipantEntry {
        ParticipantEntry {
            meta: ParticipantMeta {
                participant_id: "P1".into(),
                fps,
                dataset_tag: DatasetTag::Sedation,
            },
            frames_dir: PathBuf::from("frames"),
            landmarks: PathBuf::from("lm.csv"),
            landmark_schema: LandmarkSchema::DenseMesh,
            label_intervals: intervals,
            exclusions,
            au_file: None,
        }
    }

    // Independent membership oracle: frame i shows at i * (1000 / fps).
    fn oracle_pain_frames(start: f64, end: f64, fps: u32, n: usize) -> Vec<u32> {
        let period = 1000.0 / fps as f64;
        (0..n as u32)
            .filter(|&i| {
                let t = i as f64 * period;
                t >= start - 1e-9 && t < end - 1e-9
            })
            .collect()
    }

    #[test]
    fn pain_interval_maps_to_frames_30_to_59() {
        let iv = LabelInterval {
            start_ms: 1000.0,
            end_ms: 2000.0,
            rating: Rating::Pain,
        };
        let labels = label_frames_from_intervals(30, &[iv], &[], 90);
        let pain: Vec<u32> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == PainLabel::Pain)
            .map(|(i, _)| i as u32)
            .collect();
        assert_eq!(pain, oracle_pain_frames(1000.0, 2000.0, 30, 90));
        assert_eq!(pain, (30..60).collect::<Vec<_>>());
    }

    #[test]
    fn uncovered_frame_is_excluded() {
        let iv = LabelInterval {
            start_ms: 0.0,
            end_ms: 2000.0,
            rating: Rating::NoPain,
        };
        let labels = label_frames_from_intervals(30, &[iv], &[], 90);
        // frame 75 shows at 2500 ms
        assert_eq!(labels[75], PainLabel::Excluded);
        assert_eq!(labels[10], PainLabel::NoPain);
    }

    #[test]
    fn exclusion_overlap_excludes_frame() {
        let iv = LabelInterval {
            start_ms: 0.0,
            end_ms: 10_000.0,
            rating: Rating::Pain,
        };
        // overlaps only the tail of frame 2's span [66.7, 100)
        let ex = ExclusionInterval {
            start_ms: 90.0,
            end_ms: 95.0,
        };
        let labels = label_frames_from_intervals(30, &[iv], &[ex], 5);
        assert_eq!(
            labels,
            vec![
                PainLabel::Pain,
                PainLabel::Pain,
                PainLabel::Excluded,
                PainLabel::Pain,
                PainLabel::Pain
            ]
        );
    }

    #[test]
    fn zero_frames_is_missing_frames() {
        let e = entry(30, vec![], vec![]);
        let err = resolve_frame_labels_with_count(&e, 0, None, BinarizationPolicy::default()).unwrap_err();
        assert!(matches!(err, DatasetError::MissingFrames { .. }));
    }

    #[test]
    fn au_row_count_mismatch() {
        let rows = vec![AuRow {
            frame_index: 0,
            aus: ActionUnitVector::default(),
        }];
        let err = label_frames_from_aus(&rows, 2, BinarizationPolicy::default(), "U1").unwrap_err();
        assert!(matches!(err, DatasetError::LabelSource { .. }));
    }

    #[test]
    fn zero_aus_are_no_pain() {
        let rows = vec![AuRow {
            frame_index: 0,
            aus: ActionUnitVector::default(),
        }];
        let labels = label_frames_from_aus(&rows, 1, BinarizationPolicy::default(), "U1").unwrap();
        assert_eq!(labels, vec![PainLabel::NoPain]);
    }

    #[test]
    fn timestamps_follow_frame_index() {
        let iv = LabelInterval {
            start_ms: 0.0,
            end_ms: 5000.0,
            rating: Rating::NoPain,
        };
        let e = entry(60, vec![iv], vec![]);
        let recs = resolve_frame_labels_with_count(&e, 120, None, BinarizationPolicy::default()).unwrap();
        for r in &recs {
            assert!((r.timestamp_ms - r.frame_index as f64 * 1000.0 / 60.0).abs() < 0.5);
        }
        assert!(recs.windows(2).all(|w| w[0].timestamp_ms < w[1].timestamp_ms));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn intervals() -> impl Strategy<Value = Vec<(f64, f64, bool)>> {
            prop::collection::vec((1.0f64..2000.0, 0.0f64..500.0, any::<bool>()), 0..8)
        }

        proptest! {
            // Every frame receives exactly one label, and the pain prevalence
            // matches the interval mass to within one frame per boundary.
            #[test]
            fn labeling_is_total_and_tracks_interval_mass(
                spans in intervals(),
                fps in prop::sample::select(vec![25u32, 30, 60]),
            ) {
                let mut t = 0.0;
                let mut ivs = Vec::new();
                for (len, gap, pain) in spans {
                    t += gap;
                    ivs.push(LabelInterval {
                        start_ms: t,
                        end_ms: t + len,
                        rating: if pain { Rating::Pain } else { Rating::NoPain },
                    });
                    t += len;
                }
                let n = (t / 1000.0 * fps as f64).ceil() as usize + 5;
                let labels = label_frames_from_intervals(fps, &ivs, &[], n);
                prop_assert_eq!(labels.len(), n);
                let again = label_frames_from_intervals(fps, &ivs, &[], n);
                prop_assert_eq!(&labels, &again);

                let period = 1000.0 / fps as f64;
                for (iv_idx, iv) in ivs.iter().enumerate() {
                    let expected = (iv.end_ms - iv.start_ms) / period;
                    let want: PainLabel = iv.rating.into();
                    let counted = labels
                        .iter()
                        .enumerate()
                        .filter(|(i, l)| **l == want && iv.contains(*i as f64 * period))
                        .count() as f64;
                    prop_assert!((counted - expected).abs() <= 2.0, "interval {iv_idx}: {counted} vs {expected}");
                }
            }
        }
    }
}
