//! Classical baselines: HOG descriptors fed to a linear max-margin
//! classifier or to a random forest. Both emit continuous scores so they
//! can be ranked by AUC and AP.

mod forest;
mod hog;
mod linear;

pub use forest::{fit_forest, forest_score, ForestParams, Node, Tree};
pub use hog::{extract_hog, extract_hog_rgb, to_gray, HogParams};
pub use linear::{fit_linear_margin, LinearParams};

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("HOG dimension error: {0}")]
    Dimension(String),
    #[error("training labels contain a single class")]
    DegenerateLabels,
    #[error("{rows} feature rows but {labels} labels")]
    Misaligned { rows: usize, labels: usize },
    #[error("model has not been fitted")]
    NotFitted,
    #[error("model file {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    LinearMargin,
    Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TrainedParams {
    Unfitted,
    Linear { weights: Vec<f32>, bias: f32 },
    Forest { trees: Vec<Tree> },
}

/// A baseline classifier and the HOG geometry its features came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    pub hog: HogParams,
    pub params: TrainedParams,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub hog: HogParams,
    pub linear: LinearParams,
    pub forest: ForestParams,
}

impl BaselineModel {
    pub fn unfitted(kind: BaselineKind, hog: HogParams) -> Self {
        Self {
            kind,
            hog,
            params: TrainedParams::Unfitted,
        }
    }

    /// Signed margin for the linear model, positive-vote fraction for the forest.
    pub fn score_features(&self, features: &[Vec<f32>]) -> Result<Vec<f64>, BaselineError> {
        match &self.params {
            TrainedParams::Unfitted => Err(BaselineError::NotFitted),
            TrainedParams::Linear { weights, bias } => Ok(features
                .iter()
                .map(|x| {
                    x.iter().zip(weights).map(|(&a, &w)| a as f64 * w as f64).sum::<f64>() + *bias as f64
                })
                .collect()),
            TrainedParams::Forest { trees } => Ok(features.iter().map(|x| forest_score(trees, x)).collect()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        let io = |message: String| BaselineError::Io {
            path: path.to_path_buf(),
            message,
        };
        let json = serde_json::to_string(self).map_err(|e| io(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let io = |message: String| BaselineError::Io {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| io(e.to_string()))
    }
}

pub fn fit_baseline(
    features: &[Vec<f32>],
    labels: &[bool],
    kind: BaselineKind,
    cfg: &BaselineConfig,
) -> Result<BaselineModel, BaselineError> {
    if features.len() != labels.len() {
        return Err(BaselineError::Misaligned {
            rows: features.len(),
            labels: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(BaselineError::DegenerateLabels);
    }
    let params = match kind {
        BaselineKind::LinearMargin => {
            let (weights, bias) = fit_linear_margin(features, labels, &cfg.linear);
            TrainedParams::Linear { weights, bias }
        }
        BaselineKind::Forest => TrainedParams::Forest {
            trees: fit_forest(features, labels, &cfg.forest),
        },
    };
    Ok(BaselineModel {
        kind,
        hog: cfg.hog,
        params,
    })
}

pub fn hog_features(crops: &[RgbImage], hog: &HogParams) -> Result<Vec<Vec<f32>>, BaselineError> {
    crops.iter().map(|c| extract_hog_rgb(c, hog)).collect()
}

/// Scores raw crops: grayscale, HOG, classifier.
pub fn score_frames_baseline(model: &BaselineModel, crops: &[RgbImage]) -> Result<Vec<f64>, BaselineError> {
    if matches!(model.params, TrainedParams::Unfitted) {
        return Err(BaselineError::NotFitted);
    }
    model.score_features(&hog_features(crops, &model.hog)?)
}
