use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::baseline::{ForestParams, HogParams, LinearParams};
use crate::deep::{BackboneProfile, HeadSpec, TrainSchedule};
use crate::preprocess::{AugmentationSpec, CropSpec};
use crate::pspi::BinarizationPolicy;
use crate::smoothing::SmoothingConfig;

/// Which data the models learn from. Test participants always come from
/// the primary (sedation) manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    SedationOnly,
    Combined,
    ExternalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Deep,
    HogLinear,
    HogForest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingSection {
    pub enabled: bool,
    pub window_seconds: f64,
    pub reset_at_gaps: bool,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        Self {
            enabled: true,
            window_seconds: SmoothingConfig::default().window_seconds,
            reset_at_gaps: false,
        }
    }
}

impl SmoothingSection {
    pub fn config(&self) -> SmoothingConfig {
        SmoothingConfig {
            window_seconds: self.window_seconds,
            reset_at_gaps: self.reset_at_gaps,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepSection {
    pub profile: BackboneProfile,
    /// Converted backbone weights (safetensors); required by the paper profile.
    pub weights: Option<PathBuf>,
    pub hidden_width: usize,
    pub score_batch: usize,
}

impl Default for DeepSection {
    fn default() -> Self {
        Self {
            profile: BackboneProfile::Paper,
            weights: None,
            hidden_width: HeadSpec::default().hidden_width,
            score_batch: crate::deep::DEFAULT_SCORE_BATCH,
        }
    }
}

impl DeepSection {
    pub fn head(&self) -> HeadSpec {
        HeadSpec {
            hidden_width: self.hidden_width,
            ..Default::default()
        }
    }
}

/// One experiment, read from TOML. Every field has a default; relative
/// paths are taken relative to the config file. Seeds inside the
/// `augmentation`, `schedule`, `linear` and `forest` sections are replaced
/// by values derived from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub regime: Regime,
    pub model: ModelKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub primary_manifest: Option<PathBuf>,
    pub external_manifest: Option<PathBuf>,
    /// Fraction of external frames kept for training, in `(0, 1]`.
    pub external_subsample: f64,
    pub parallel_folds: bool,
    pub smoothing: SmoothingSection,
    pub crop: CropSpec,
    pub augmentation: AugmentationSpec,
    pub pspi: BinarizationPolicy,
    pub deep: DeepSection,
    pub schedule: TrainSchedule,
    pub hog: HogParams,
    pub linear: LinearParams,
    pub forest: ForestParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment_id: "experiment".into(),
            regime: Regime::SedationOnly,
            model: ModelKind::Deep,
            seed: 0,
            output_dir: PathBuf::from("runs/experiment"),
            primary_manifest: None,
            external_manifest: None,
            external_subsample: 1.0,
            parallel_folds: false,
            smoothing: SmoothingSection::default(),
            crop: CropSpec::default(),
            augmentation: AugmentationSpec::default(),
            pspi: BinarizationPolicy::default(),
            deep: DeepSection::default(),
            schedule: TrainSchedule::default(),
            hog: HogParams::default(),
            linear: LinearParams::default(),
            forest: ForestParams::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    /// Parses a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            self.primary_manifest.as_mut(),
            self.external_manifest.as_mut(),
            self.deep.weights.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.experiment_id.is_empty() || self.experiment_id.contains(['/', '\\']) {
            return Err(invalid("experiment_id must be a non-empty name without path separators"));
        }
        if self.primary_manifest.is_none() {
            return Err(invalid("primary_manifest is required: test participants come from it"));
        }
        if matches!(self.regime, Regime::ExternalOnly | Regime::Combined) && self.external_manifest.is_none() {
            return Err(invalid(format!("regime {:?} requires external_manifest", self.regime)));
        }
        if !(self.external_subsample > 0.0 && self.external_subsample <= 1.0) {
            return Err(invalid("external_subsample must lie in (0, 1]"));
        }
        if !(self.smoothing.window_seconds > 0.0 && self.smoothing.window_seconds.is_finite()) {
            return Err(invalid("smoothing.window_seconds must be positive"));
        }
        self.crop.validate().map_err(|e| invalid(e.to_string()))?;
        self.augmentation.validate().map_err(|e| invalid(e.to_string()))?;
        self.pspi.validate().map_err(|e| invalid(e.to_string()))?;
        if self.model == ModelKind::Deep {
            self.deep.head().validate().map_err(|e| invalid(e.to_string()))?;
            self.schedule.validate().map_err(|e| invalid(e.to_string()))?;
            if self.deep.score_batch == 0 {
                return Err(invalid("deep.score_batch must be positive"));
            }
            if self.deep.profile == BackboneProfile::Paper && self.crop.output_size < 32 {
                return Err(invalid("the paper backbone needs crops of at least 32 px"));
            }
        } else {
            let h = &self.hog;
            if h.cell_size == 0 || h.block_size == 0 || h.block_stride == 0 || h.orientation_bins == 0 {
                return Err(invalid("hog sizes must be positive"));
            }
            if self.crop.output_size as usize % h.cell_size != 0 {
                return Err(invalid(format!(
                    "crop.output_size {} is not a multiple of hog.cell_size {}",
                    self.crop.output_size, h.cell_size
                )));
            }
            if (self.crop.output_size as usize / h.cell_size) < h.block_size {
                return Err(invalid("crop too small for one HOG block"));
            }
        }
        if self.model == ModelKind::HogForest && self.forest.n_trees == 0 {
            return Err(invalid("forest.n_trees must be positive"));
        }
        Ok(())
    }
}
