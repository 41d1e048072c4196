use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::BaselineError;

/// Histogram-of-oriented-gradients geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HogParams {
    /// Cell side in pixels.
    pub cell_size: usize,
    /// Block side in cells.
    pub block_size: usize,
    /// Block stride in cells.
    pub block_stride: usize,
    pub orientation_bins: usize,
    /// Signed orientations span 360 degrees, unsigned 180.
    pub signed: bool,
}

impl Default for HogParams {
    fn default() -> Self {
        Self {
            cell_size: 8,
            block_size: 2,
            block_stride: 1,
            orientation_bins: 9,
            signed: false,
        }
    }
}

impl HogParams {
    /// Descriptor length for a `width x height` image.
    pub fn descriptor_len(&self, width: usize, height: usize) -> Result<usize, BaselineError> {
        let fail = |m: String| Err(BaselineError::Dimension(m));
        if self.cell_size == 0 || self.block_size == 0 || self.block_stride == 0 {
            return fail("cell, block and stride sizes must be positive".into());
        }
        if self.orientation_bins < 2 {
            return fail(format!("{} orientation bins, need at least 2", self.orientation_bins));
        }
        if width % self.cell_size != 0 || height % self.cell_size != 0 {
            return fail(format!(
                "{width}x{height} image not divisible into {}-pixel cells",
                self.cell_size
            ));
        }
        let (cx, cy) = (width / self.cell_size, height / self.cell_size);
        if cx < self.block_size || cy < self.block_size {
            return fail(format!("{cx}x{cy} cells cannot hold a {}-cell block", self.block_size));
        }
        let bx = (cx - self.block_size) / self.block_stride + 1;
        let by = (cy - self.block_size) / self.block_stride + 1;
        Ok(bx * by * self.block_size * self.block_size * self.orientation_bins)
    }
}

/// Luma (ITU-R BT.601 weights) as floats in `[0, 255]`.
pub fn to_gray(img: &RgbImage) -> Vec<f32> {
    img.pixels()
        .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
        .collect()
}

const EPS: f32 = 1e-3;
const CLIP: f32 = 0.2;

/// HOG descriptor of a grayscale image: centered-difference gradients,
/// magnitude-weighted orientation votes split linearly between the two
/// nearest bin centers (bin 0 centered on 0 degrees), and L2-Hys block
/// normalization. Blocks are emitted row-major, cells within a block
/// row-major, bins innermost.
pub fn extract_hog(gray: &[f32], width: usize, height: usize, params: &HogParams) -> Result<Vec<f32>, BaselineError> {
    if gray.len() != width * height {
        return Err(BaselineError::Dimension(format!(
            "buffer of {} pixels for a {width}x{height} image",
            gray.len()
        )));
    }
    let len = params.descriptor_len(width, height)?;
    let bins = params.orientation_bins;
    let span = if params.signed { 360.0f32 } else { 180.0 };
    let bin_width = span / bins as f32;
    let (cells_x, cells_y) = (width / params.cell_size, height / params.cell_size);
    let mut hist = vec![0f32; cells_x * cells_y * bins];

    let px = |x: isize, y: isize| -> f32 {
        let x = x.clamp(0, width as isize - 1) as usize;
        let y = y.clamp(0, height as isize - 1) as usize;
        gray[y * width + x]
    };
    for y in 0..height {
        for x in 0..width {
            let (xi, yi) = (x as isize, y as isize);
            let gx = px(xi + 1, yi) - px(xi - 1, yi);
            let gy = px(xi, yi + 1) - px(xi, yi - 1);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 360.0;
            }
            if !params.signed && angle >= 180.0 {
                angle -= 180.0;
            }
            let pos = angle / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as usize) % bins;
            let b1 = (b0 + 1) % bins;
            let cell = (y / params.cell_size) * cells_x + x / params.cell_size;
            hist[cell * bins + b0] += mag * (1.0 - frac);
            hist[cell * bins + b1] += mag * frac;
        }
    }

    let mut out = Vec::with_capacity(len);
    let bs = params.block_size;
    let mut by = 0;
    while by + bs <= cells_y {
        let mut bx = 0;
        while bx + bs <= cells_x {
            let start = out.len();
            for cy in by..by + bs {
                for cx in bx..bx + bs {
                    let c = (cy * cells_x + cx) * bins;
                    out.extend_from_slice(&hist[c..c + bins]);
                }
            }
            l2_hys(&mut out[start..]);
            bx += params.block_stride;
        }
        by += params.block_stride;
    }
    debug_assert_eq!(out.len(), len);
    Ok(out)
}

fn l2_hys(v: &mut [f32]) {
    let norm = |v: &[f32]| (v.iter().map(|x| x * x).sum::<f32>() + EPS * EPS).sqrt();
    let n = norm(v);
    v.iter_mut().for_each(|x| *x = (*x / n).min(CLIP));
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

pub fn extract_hog_rgb(img: &RgbImage, params: &HogParams) -> Result<Vec<f32>, BaselineError> {
    extract_hog(&to_gray(img), img.width() as usize, img.height() as usize, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_length_on_224() {
        let p = HogParams::default();
        assert_eq!(p.descriptor_len(224, 224).unwrap(), 27 * 27 * 4 * 9);
        let v = extract_hog(&vec![0.0; 224 * 224], 224, 224, &p).unwrap();
        assert_eq!(v.len(), 26_244);
    }

    #[test]
    fn constant_image_gives_zero_descriptor() {
        let v = extract_hog(&vec![113.0; 64 * 64], 64, 64, &HogParams::default()).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn vertical_edge_votes_horizontal_gradient_bin() {
        let (w, h) = (32usize, 32usize);
        let img: Vec<f32> = (0..w * h).map(|i| if i % w < 16 { 20.0 } else { 220.0 }).collect();
        let p = HogParams::default();
        let v = extract_hog(&img, w, h, &p).unwrap();
        // every block touching the edge has all its mass in bin 0
        let block_len = 4 * 9;
        let mut edge_blocks = 0;
        for block in v.chunks(block_len) {
            let total: f32 = block.iter().sum();
            if total == 0.0 {
                continue;
            }
            edge_blocks += 1;
            for cell in block.chunks(9) {
                let cell_total: f32 = cell.iter().sum();
                if cell_total > 0.0 {
                    assert!(cell[0] / cell_total > 0.99, "{cell:?}");
                }
            }
        }
        assert!(edge_blocks > 0);
    }

    #[test]
    fn indivisible_size_rejected() {
        assert!(matches!(
            extract_hog(&vec![0.0; 30 * 30], 30, 30, &HogParams::default()),
            Err(BaselineError::Dimension(_))
        ));
    }

    proptest! {
        #[test]
        fn length_matches_closed_form(cell in 2usize..10, block in 1usize..4, stride in 1usize..3, bins in 2usize..12, cx in 4usize..9, cy in 4usize..9) {
            let p = HogParams { cell_size: cell, block_size: block, block_stride: stride, orientation_bins: bins, signed: false };
            let (w, h) = (cx * cell, cy * cell);
            let v = extract_hog(&vec![1.0; w * h], w, h, &p).unwrap();
            let bx = (cx - block) / stride + 1;
            let by = (cy - block) / stride + 1;
            prop_assert_eq!(v.len(), bx * by * block * block * bins);
        }

        #[test]
        fn brightness_shift_invariant(seed in any::<u64>(), shift in -40.0f32..40.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img: Vec<f32> = (0..32 * 32).map(|_| rng.gen_range(50.0..200.0)).collect();
            let shifted: Vec<f32> = img.iter().map(|v| v + shift).collect();
            let p = HogParams::default();
            let a = extract_hog(&img, 32, 32, &p).unwrap();
            let b = extract_hog(&shifted, 32, 32, &p).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-3);
            }
        }
    }
}
