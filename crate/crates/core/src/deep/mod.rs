//! Fine-tuned convolutional classifier: a pretrained backbone with a fresh
//! two-layer head, trained in two phases (head only, then head plus the
//! last backbone stage) and scored by the softmax probability of pain.
//!
//! The layers are implemented directly on `Vec<f32>` buffers with
//! im2col + GEMM convolutions; see [`nn`].

mod backbone;
mod checkpoint;
pub mod nn;
mod train;

pub use backbone::{Backbone, BackboneProfile, Stage};
pub use checkpoint::{load_checkpoint, load_pretrained_weights, save_checkpoint};
pub use train::{lr_at_epoch, train_two_phase, EpochLog, TrainSample, TrainSchedule};

use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::preprocess::derive_seed;
use nn::{Linear, Param, Tensor, Visitor};

/// ImageNet channel statistics used by the published backbone.
pub const CHANNEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const CHANNEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, thiserror::Error)]
pub enum DeepError {
    #[error("pretrained weights unavailable: {0}")]
    WeightsUnavailable(String),
    #[error("weight file {path}: {message}")]
    Weights { path: PathBuf, message: String },
    #[error("training set must contain both classes")]
    DegenerateLabels,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr {lr})")]
    NonFiniteLoss { epoch: u32, batch: usize, lr: f64 },
    #[error("model has not been trained")]
    NotTrained,
    #[error("epoch {epoch} outside 1..={total}")]
    Range { epoch: u32, total: u32 },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSpec {
    pub hidden_width: usize,
    pub output_classes: usize,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            hidden_width: 256,
            output_classes: 2,
        }
    }
}

impl HeadSpec {
    pub fn validate(&self) -> Result<(), DeepError> {
        if self.hidden_width < 2 {
            return Err(DeepError::InvalidSpec(format!("hidden_width {} < 2", self.hidden_width)));
        }
        if self.output_classes != 2 {
            return Err(DeepError::InvalidSpec("output_classes must be 2".into()));
        }
        Ok(())
    }
}

/// Hidden layer, rectifier, two logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Head {
    pub fn new(in_features: usize, spec: &HeadSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"head", &seed.to_le_bytes()]));
        Self {
            fc1: Linear::new(in_features, spec.hidden_width, &mut rng),
            fc2: Linear::new(spec.hidden_width, spec.output_classes, &mut rng),
        }
    }

    pub fn visit(&self, f: &mut Visitor<'_>) {
        self.fc1.visit("head.fc1", f);
        self.fc2.visit("head.fc2", f);
    }

    pub fn trainable_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        self.fc1.trainable_mut(out);
        self.fc2.trainable_mut(out);
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        let rest = name.strip_prefix("head.")?;
        let (layer, suffix) = rest.split_once('.')?;
        match layer {
            "fc1" => self.fc1.param_mut(suffix),
            "fc2" => self.fc2.param_mut(suffix),
            _ => None,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fc1: self.fc1.zeros_like(),
            fc2: self.fc2.zeros_like(),
        }
    }

    fn forward(&self, feats: &[f32], n: usize) -> Vec<f32> {
        let mut h = self.fc1.forward(feats, n);
        nn::relu_flat(&mut h);
        self.fc2.forward(&h, n)
    }
}

/// Which parameters the optimizer may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableMask {
    HeadOnly,
    HeadAndLastStage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepModel {
    pub backbone: Backbone,
    pub head: Head,
    pub head_spec: HeadSpec,
    pub mask: TrainableMask,
    pub trained: bool,
    pub seed: u64,
    pub schedule: Option<TrainSchedule>,
}

/// Builds a model with a freshly initialized head. The paper profile needs
/// a converted weight file; without one it fails with `WeightsUnavailable`.
pub fn build_model(
    head: &HeadSpec,
    profile: BackboneProfile,
    weights: Option<&Path>,
    seed: u64,
) -> Result<DeepModel, DeepError> {
    head.validate()?;
    let backbone = match profile {
        BackboneProfile::Smoke => Backbone::smoke(seed),
        BackboneProfile::Paper => {
            let path = weights.ok_or_else(|| {
                DeepError::WeightsUnavailable(
                    "the paper profile needs [deep] weights pointing at converted resnext50_32x4d safetensors".into(),
                )
            })?;
            let mut b = Backbone::resnext50_32x4d(seed);
            load_pretrained_weights(&mut b, path)?;
            b
        }
    };
    Ok(DeepModel::with_backbone(backbone, head, seed))
}

impl DeepModel {
    pub fn with_backbone(backbone: Backbone, head: &HeadSpec, seed: u64) -> Self {
        Self {
            head: Head::new(backbone.feature_dim(), head, seed),
            backbone,
            head_spec: *head,
            mask: TrainableMask::HeadOnly,
            trained: false,
            seed,
            schedule: None,
        }
    }

    pub fn visit(&self, f: &mut Visitor<'_>) {
        self.backbone.visit(f);
        self.head.visit(f);
    }

    /// Whether the current mask lets the optimizer update `name`.
    pub fn is_trainable(&self, name: &str) -> bool {
        if name.starts_with("head.") {
            return true;
        }
        if self.mask == TrainableMask::HeadOnly {
            return false;
        }
        let last = &self.backbone.stages[self.backbone.last_stage()];
        let mut found = false;
        last.visit(&mut |n, _, t| found |= t && n == name);
        found
    }

    /// `(name, trainable under the current mask)` for every weight.
    pub fn parameter_names(&self) -> Vec<(String, bool)> {
        let mut names = Vec::new();
        self.visit(&mut |n, _, t| {
            if t {
                names.push(n.to_string())
            }
        });
        names.into_iter().map(|n| (n.clone(), self.is_trainable(&n))).collect()
    }

    pub fn min_input_size(&self) -> u32 {
        match self.backbone.profile {
            BackboneProfile::Smoke => 16,
            BackboneProfile::Paper => 32,
        }
    }

    /// Raw logits, `[n][2]`. Inputs must share one square size.
    pub fn logits(&self, images: &[&RgbImage]) -> Result<Vec<[f32; 2]>, DeepError> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let x = images_to_tensor(images, self.min_input_size())?;
        let feats_map = self.backbone.forward_frozen(x, self.backbone.stages.len());
        let feats = self.backbone.pool.forward(&feats_map);
        let out = self.head.forward(&feats, images.len());
        Ok(out.chunks(2).map(|c| [c[0], c[1]]).collect())
    }
}

/// Normalized NCHW tensor from same-sized RGB crops.
pub fn images_to_tensor(images: &[&RgbImage], min_size: u32) -> Result<Tensor, DeepError> {
    let (w, h) = images[0].dimensions();
    if w != h || w < min_size {
        return Err(DeepError::Input(format!("expected square input of at least {min_size}px, got {w}x{h}")));
    }
    let mut t = Tensor::zeros(images.len(), 3, h as usize, w as usize);
    let plane = (w * h) as usize;
    for (n, img) in images.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(DeepError::Input(format!(
                "mixed input sizes {}x{} and {w}x{h}",
                img.width(),
                img.height()
            )));
        }
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                t.data[(n * 3 + c) * plane + i] = (px[c] as f32 / 255.0 - CHANNEL_MEAN[c]) / CHANNEL_STD[c];
            }
        }
    }
    Ok(t)
}

/// Two-class softmax; returns P(pain) for logits `[no_pain, pain]`.
pub fn pain_probability(logits: [f32; 2]) -> f64 {
    let (a, b) = (logits[0] as f64, logits[1] as f64);
    1.0 / (1.0 + (a - b).exp())
}

pub const DEFAULT_SCORE_BATCH: usize = 64;

/// Softmax pain probability per crop, scored in batches of
/// [`DEFAULT_SCORE_BATCH`]. No augmentation is applied.
pub fn score_frames_deep(model: &DeepModel, crops: &[RgbImage]) -> Result<Vec<f64>, DeepError> {
    score_frames_deep_batched(model, crops, DEFAULT_SCORE_BATCH)
}

pub fn score_frames_deep_batched(model: &DeepModel, crops: &[RgbImage], batch: usize) -> Result<Vec<f64>, DeepError> {
    if !model.trained {
        return Err(DeepError::NotTrained);
    }
    let mut out = Vec::with_capacity(crops.len());
    for chunk in crops.chunks(batch.max(1)) {
        let refs: Vec<&RgbImage> = chunk.iter().collect();
        out.extend(model.logits(&refs)?.into_iter().map(pain_probability));
    }
    Ok(out)
}
