use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetTag, ExclusionInterval, LabelInterval, ParticipantMeta};
use crate::preprocess::LandmarkSchema;

/// On-disk form of one manifest line. Locators are relative to the
/// manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantRecord {
    pub id: String,
    pub fps: u32,
    #[serde(default = "default_tag")]
    pub dataset: DatasetTag,
    pub frames_dir: PathBuf,
    pub landmarks: PathBuf,
    pub landmark_schema: LandmarkSchema,
    #[serde(default)]
    pub label_intervals: Vec<LabelInterval>,
    #[serde(default)]
    pub exclusions: Vec<ExclusionInterval>,
    #[serde(default)]
    pub au_file: Option<PathBuf>,
}

fn default_tag() -> DatasetTag {
    DatasetTag::Sedation
}

/// A validated participant with resolved locators.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantEntry {
    pub meta: ParticipantMeta,
    pub frames_dir: PathBuf,
    pub landmarks: PathBuf,
    pub landmark_schema: LandmarkSchema,
    pub label_intervals: Vec<LabelInterval>,
    pub exclusions: Vec<ExclusionInterval>,
    pub au_file: Option<PathBuf>,
}

impl ParticipantEntry {
    pub fn id(&self) -> &str {
        &self.meta.participant_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub source: PathBuf,
    pub participants: Vec<ParticipantEntry>,
}

impl DatasetManifest {
    pub fn participant(&self, id: &str) -> Option<&ParticipantEntry> {
        self.participants.iter().find(|p| p.id() == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.participants.iter().map(|p| p.id().to_string()).collect()
    }

    pub fn ids_with_tag(&self, tag: DatasetTag) -> Vec<String> {
        self.participants
            .iter()
            .filter(|p| p.meta.dataset_tag == tag)
            .map(|p| p.id().to_string())
            .collect()
    }
}

/// Reads and validates a manifest file, checking that every locator exists.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = parse_manifest(&text, path, base)?;
    for p in &manifest.participants {
        check_locators(p)?;
    }
    Ok(manifest)
}

/// Parses manifest text and checks the structural invariants. Locators are
/// joined onto `base` but not touched on disk.
pub fn parse_manifest(text: &str, source: &Path, base: &Path) -> Result<DatasetManifest, DatasetError> {
    let mut participants = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record: ParticipantRecord =
            serde_json::from_str(trimmed).map_err(|e| DatasetError::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if !seen.insert(record.id.clone()) {
            return Err(invalid(&record.id, "duplicate participant id"));
        }
        participants.push(validate_record(record, base)?);
    }
    if participants.is_empty() {
        return Err(DatasetError::Parse {
            path: source.to_path_buf(),
            line: 0,
            message: "manifest lists no participants".into(),
        });
    }
    Ok(DatasetManifest {
        source: source.to_path_buf(),
        participants,
    })
}

fn invalid(id: &str, message: impl Into<String>) -> DatasetError {
    DatasetError::Validation {
        participant: id.to_string(),
        message: message.into(),
    }
}

fn validate_record(r: ParticipantRecord, base: &Path) -> Result<ParticipantEntry, DatasetError> {
    let id = r.id.as_str();
    if id.is_empty() {
        return Err(invalid(id, "empty participant id"));
    }
    if r.fps == 0 {
        return Err(invalid(id, "fps must be positive"));
    }
    if r.dataset == DatasetTag::Sedation && r.fps != 30 && r.fps != 60 {
        log::warn!("participant {id}: unusual frame rate {} fps for a sedation recording", r.fps);
    }

    match (r.dataset, r.label_intervals.is_empty(), r.au_file.is_some()) {
        (_, false, true) => {
            return Err(invalid(id, "both label intervals and an AU file are given"));
        }
        (DatasetTag::Sedation, _, true) => {
            return Err(invalid(id, "sedation participants are labeled by intervals, not AU files"));
        }
        (DatasetTag::Sedation, true, false) => {
            return Err(invalid(id, "no label intervals given"));
        }
        (DatasetTag::ExternalAuCoded, _, false) => {
            return Err(invalid(id, "AU-coded participants need an au_file"));
        }
        _ => {}
    }

    for iv in &r.label_intervals {
        check_span(id, iv.start_ms, iv.end_ms)?;
    }
    for ex in &r.exclusions {
        check_span(id, ex.start_ms, ex.end_ms)?;
    }
    let mut sorted = r.label_intervals.clone();
    sorted.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms));
    for pair in sorted.windows(2) {
        if pair[1].start_ms < pair[0].end_ms {
            return Err(invalid(
                id,
                format!(
                    "label intervals [{}, {}) and [{}, {}) overlap",
                    pair[0].start_ms, pair[0].end_ms, pair[1].start_ms, pair[1].end_ms
                ),
            ));
        }
    }

    Ok(ParticipantEntry {
        meta: ParticipantMeta {
            participant_id: r.id,
            fps: r.fps,
            dataset_tag: r.dataset,
        },
        frames_dir: base.join(r.frames_dir),
        landmarks: base.join(r.landmarks),
        landmark_schema: r.landmark_schema,
        label_intervals: sorted,
        exclusions: r.exclusions,
        au_file: r.au_file.map(|p| base.join(p)),
    })
}

fn check_span(id: &str, start: f64, end: f64) -> Result<(), DatasetError> {
    if !start.is_finite() || !end.is_finite() || start < 0.0 || end <= start {
        return Err(invalid(id, format!("invalid interval [{start}, {end})")));
    }
    Ok(())
}

fn check_locators(p: &ParticipantEntry) -> Result<(), DatasetError> {
    if !p.frames_dir.is_dir() {
        return Err(invalid(
            p.id(),
            format!("frames_dir {} does not exist", p.frames_dir.display()),
        ));
    }
    if !p.landmarks.is_file() {
        return Err(invalid(
            p.id(),
            format!("landmark file {} does not exist", p.landmarks.display()),
        ));
    }
    if let Some(au) = &p.au_file {
        if !au.is_file() {
            return Err(invalid(p.id(), format!("AU file {} does not exist", au.display())));
        }
    }
    Ok(())
}
