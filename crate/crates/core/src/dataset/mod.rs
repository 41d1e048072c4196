//! Shared data model: frame records, label intervals and dataset manifests.
//!
//! A dataset is described by a JSON Lines manifest, one participant object
//! per line. Ground truth comes from exactly one of two sources per
//! participant: nurse-style rating intervals (sedation recordings) or
//! per-frame action-unit codes (external, AU-coded archives).

mod au_file;
mod labels;
mod manifest;

pub use au_file::{read_au_file, AuRow};
pub use labels::{
    frame_timestamp_ms, label_frames_from_aus, label_frames_from_intervals, resolve_frame_labels,
    resolve_frame_labels_with_count, scan_frame_dir, FrameDir,
};
pub use manifest::{load_manifest, parse_manifest, DatasetManifest, ParticipantEntry, ParticipantRecord};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// Ground-truth state of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PainLabel {
    NoPain,
    Pain,
    /// Never used for training or metrics.
    Excluded,
}

impl PainLabel {
    /// `Some(true)` for pain, `Some(false)` for no pain, `None` when excluded.
    pub fn as_binary(self) -> Option<bool> {
        match self {
            PainLabel::NoPain => Some(false),
            PainLabel::Pain => Some(true),
            PainLabel::Excluded => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PainLabel::NoPain => "no_pain",
            PainLabel::Pain => "pain",
            PainLabel::Excluded => "excluded",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "no_pain" => Some(PainLabel::NoPain),
            "pain" => Some(PainLabel::Pain),
            "excluded" => Some(PainLabel::Excluded),
            _ => None,
        }
    }
}

/// Binary rating attached to a nurse interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rating {
    NoPain,
    Pain,
}

impl From<Rating> for PainLabel {
    fn from(r: Rating) -> Self {
        match r {
            Rating::NoPain => PainLabel::NoPain,
            Rating::Pain => PainLabel::Pain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    NurseInterval,
    AuCoded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetTag {
    Sedation,
    ExternalAuCoded,
}

/// Half-open rating interval `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelInterval {
    pub start_ms: f64,
    pub end_ms: f64,
    pub rating: Rating,
}

impl LabelInterval {
    pub fn contains(&self, t_ms: f64) -> bool {
        t_ms >= self.start_ms && t_ms < self.end_ms
    }
}

/// Segment where the face was out of view. Any overlap with a frame's
/// display span excludes that frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExclusionInterval {
    pub start_ms: f64,
    pub end_ms: f64,
}

impl ExclusionInterval {
    /// Overlap test against the frame span `[t0, t1)`.
    pub fn overlaps(&self, t0: f64, t1: f64) -> bool {
        self.start_ms < t1 && self.end_ms > t0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantMeta {
    pub participant_id: String,
    pub fps: u32,
    pub dataset_tag: DatasetTag,
}

/// One video frame with its resolved ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub participant_id: String,
    pub frame_index: u32,
    pub timestamp_ms: f64,
    pub label: PainLabel,
    pub source: LabelSource,
    pub image_ref: PathBuf,
    pub landmark_ref: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("manifest validation failed for {participant}: {message}")]
    Validation { participant: String, message: String },
    #[error("participant {0} is not in the manifest")]
    UnknownParticipant(String),
    #[error("no frames found for participant {participant} in {dir}")]
    MissingFrames { participant: String, dir: PathBuf },
    #[error("frame directory {dir} is missing frame {index}")]
    FrameGap { dir: PathBuf, index: u32 },
    #[error("label source error for {participant}: {message}")]
    LabelSource { participant: String, message: String },
    #[error(transparent)]
    Pspi(#[from] crate::pspi::PspiError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors that indicate malformed input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            DatasetError::Parse { .. }
                | DatasetError::Validation { .. }
                | DatasetError::UnknownParticipant(_)
        )
    }
}
