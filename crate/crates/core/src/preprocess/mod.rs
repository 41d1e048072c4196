//! Eye-region crops from raw frames and external landmark estimates, plus
//! the training-time augmentation pipeline.
//!
//! The pipeline per frame is: adapt the provider's landmarks to the four
//! canthi, measure the intercanthal distance, derive a crop box around the
//! eyes, then resample that box to a fixed square.

mod augment;
mod crop;
mod landmarks;

pub use augment::{augment_frame, derive_seed, frame_rng, AugmentationSpec};
pub use crop::{compute_crop_box, crop_and_resize, intercanthal_distance, CropBox, CropSpec};
pub use landmarks::{
    adapt_landmarks, read_landmark_file, write_landmark_file, CanonicalEyeLandmarks, LandmarkSchema,
    LandmarkTrack, Point, DENSE_MESH_CANTHI, SPARSE68_CANTHI,
};

use std::path::{Path, PathBuf};

use image::RgbImage;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("landmark schema {schema:?} expects {expected} points, got {got}")]
    Schema {
        schema: LandmarkSchema,
        expected: String,
        got: usize,
    },
    #[error("landmark provider reported no face")]
    Confidence,
    #[error("degenerate eye geometry: {0}")]
    DegenerateGeometry(String),
    #[error("crop box is empty or outside the frame")]
    EmptyBox,
    #[error("invalid crop or augmentation parameters: {0}")]
    InvalidSpec(String),
    #[error("landmark file {path}: {message}")]
    LandmarkFile { path: PathBuf, message: String },
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

/// Cache path for a crop: `<root>/<participant>/<frame_index>.png`.
pub fn crop_cache_path(root: &Path, participant: &str, frame_index: u32) -> PathBuf {
    root.join(participant).join(format!("{frame_index:06}.png"))
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, PreprocessError> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|source| PreprocessError::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<(), PreprocessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PreprocessError::Image {
            path: path.to_path_buf(),
            source: image::ImageError::IoError(e),
        })?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| PreprocessError::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Full deterministic preprocessing of one frame.
pub fn preprocess_frame(
    frame: &RgbImage,
    raw: &[Point],
    schema: LandmarkSchema,
    spec: &CropSpec,
) -> Result<RgbImage, PreprocessError> {
    let lm = adapt_landmarks(raw, schema)?;
    let bx = compute_crop_box(&lm, spec, (frame.width(), frame.height()))?;
    crop_and_resize(frame, &bx, spec.output_size)
}
