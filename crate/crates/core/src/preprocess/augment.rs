use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Training-time augmentations. Every component samples uniformly over its
/// range; a zero range disables the component and draws nothing from the
/// generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    pub horizontal_flip_prob: f64,
    /// Rotation part of the random affine, in `[-max, max]` degrees.
    pub max_affine_deg: f64,
    /// Translation of the random affine as a fraction of the side length.
    pub affine_translate_frac: f64,
    /// Scale range of the random affine.
    pub affine_scale: (f64, f64),
    /// Horizontal shear of the random affine, in `[-max, max]` degrees.
    pub affine_shear_deg: f64,
    /// Separate random rotation.
    pub rotation_range_deg: (f64, f64),
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            horizontal_flip_prob: 0.5,
            max_affine_deg: 30.0,
            affine_translate_frac: 0.0,
            affine_scale: (1.0, 1.0),
            affine_shear_deg: 0.0,
            rotation_range_deg: (-10.0, 10.0),
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    /// A spec that leaves every image untouched.
    pub fn identity() -> Self {
        Self {
            horizontal_flip_prob: 0.0,
            max_affine_deg: 0.0,
            affine_translate_frac: 0.0,
            affine_scale: (1.0, 1.0),
            affine_shear_deg: 0.0,
            rotation_range_deg: (0.0, 0.0),
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            seed: 0,
        }
    }

    /// True when [`augment_frame`] would return its input unchanged.
    pub fn is_identity(&self) -> bool {
        self.horizontal_flip_prob == 0.0
            && self.max_affine_deg == 0.0
            && self.affine_translate_frac == 0.0
            && self.affine_scale == (1.0, 1.0)
            && self.affine_shear_deg == 0.0
            && self.rotation_range_deg == (0.0, 0.0)
            && self.brightness == 0.0
            && self.contrast == 0.0
            && self.saturation == 0.0
    }

    pub fn validate(&self) -> Result<(), super::PreprocessError> {
        let bad = |m: &str| Err(super::PreprocessError::InvalidSpec(m.to_string()));
        if !(0.0..=1.0).contains(&self.horizontal_flip_prob) {
            return bad("horizontal_flip_prob must lie in [0, 1]");
        }
        if self.rotation_range_deg.0 > self.rotation_range_deg.1 {
            return bad("rotation range min exceeds max");
        }
        if self.affine_scale.0 <= 0.0 || self.affine_scale.0 > self.affine_scale.1 {
            return bad("affine scale range must be positive and ordered");
        }
        let non_negative = [
            self.max_affine_deg,
            self.affine_translate_frac,
            self.affine_shear_deg,
            self.brightness,
            self.contrast,
            self.saturation,
        ];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("augmentation magnitudes must be finite and non-negative");
        }
        Ok(())
    }
}

/// Stable 64-bit seed from a list of byte strings (FNV-1a, then a
/// splitmix64 finalizer).
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in part.iter().chain(std::iter::once(&0xffu8)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Generator for one (participant, frame, epoch) draw, independent of the
/// order in which frames are visited.
pub fn frame_rng(seed: u64, participant: &str, frame_index: u32, epoch: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[
        &seed.to_le_bytes(),
        participant.as_bytes(),
        &frame_index.to_le_bytes(),
        &epoch.to_le_bytes(),
    ]))
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

pub fn augment_frame<R: Rng + ?Sized>(img: &RgbImage, spec: &AugmentationSpec, rng: &mut R) -> RgbImage {
    let mut out = img.clone();

    if spec.horizontal_flip_prob > 0.0 && rng.gen_bool(spec.horizontal_flip_prob) {
        image::imageops::flip_horizontal_in_place(&mut out);
    }

    let angle = uniform(rng, -spec.max_affine_deg, spec.max_affine_deg)
        + uniform(rng, spec.rotation_range_deg.0, spec.rotation_range_deg.1);
    let shear = uniform(rng, -spec.affine_shear_deg, spec.affine_shear_deg);
    let scale = uniform(rng, spec.affine_scale.0, spec.affine_scale.1);
    let (w, h) = out.dimensions();
    let tx = uniform(rng, -spec.affine_translate_frac, spec.affine_translate_frac) * w as f64;
    let ty = uniform(rng, -spec.affine_translate_frac, spec.affine_translate_frac) * h as f64;
    if angle != 0.0 || shear != 0.0 || scale != 1.0 || tx != 0.0 || ty != 0.0 {
        out = warp_affine(&out, angle, shear, scale, (tx, ty));
    }

    let b = uniform(rng, (1.0 - spec.brightness).max(0.0), 1.0 + spec.brightness);
    let c = uniform(rng, (1.0 - spec.contrast).max(0.0), 1.0 + spec.contrast);
    let s = uniform(rng, (1.0 - spec.saturation).max(0.0), 1.0 + spec.saturation);
    if b != 1.0 || c != 1.0 || s != 1.0 {
        jitter(&mut out, b as f32, c as f32, s as f32);
    }
    out
}

/// Rotation, shear and scale about the image center followed by a
/// translation; bilinear sampling with black fill.
fn warp_affine(img: &RgbImage, angle_deg: f64, shear_deg: f64, scale: f64, t: (f64, f64)) -> RgbImage {
    let (w, h) = img.dimensions();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let sh = shear_deg.to_radians().tan();
    // forward: M = scale * R * [[1, sh], [0, 1]]
    let m = [
        [scale * cos, scale * (cos * sh - sin)],
        [scale * sin, scale * (sin * sh + cos)],
    ];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let src = img.as_raw();
    let mut out = vec![0u8; src.len()];
    let fetch = |x: i64, y: i64, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            src[((y as usize) * w as usize + x as usize) * 3 + c] as f64
        }
    };
    for oy in 0..h {
        for ox in 0..w {
            let qx = ox as f64 + 0.5 - cx - t.0;
            let qy = oy as f64 + 0.5 - cy - t.1;
            let px = inv[0][0] * qx + inv[0][1] * qy + cx - 0.5;
            let py = inv[1][0] * qx + inv[1][1] * qy + cy - 0.5;
            let (x0, y0) = (px.floor(), py.floor());
            let (fx, fy) = (px - x0, py - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let o = ((oy * w + ox) * 3) as usize;
            for c in 0..3 {
                let v = fetch(x0, y0, c) * (1.0 - fx) * (1.0 - fy)
                    + fetch(x0 + 1, y0, c) * fx * (1.0 - fy)
                    + fetch(x0, y0 + 1, c) * (1.0 - fx) * fy
                    + fetch(x0 + 1, y0 + 1, c) * fx * fy;
                out[o + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage::from_raw(w, h, out).expect("same dimensions")
}

fn luma(p: &[f32]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn jitter(img: &mut RgbImage, brightness: f32, contrast: f32, saturation: f32) {
    let mut px: Vec<f32> = img.as_raw().iter().map(|&v| v as f32).collect();
    for v in px.iter_mut() {
        *v = (*v * brightness).clamp(0.0, 255.0);
    }
    let mean = px.chunks(3).map(luma).sum::<f32>() / (px.len() / 3) as f32;
    for v in px.iter_mut() {
        *v = (mean + contrast * (*v - mean)).clamp(0.0, 255.0);
    }
    for p in px.chunks_mut(3) {
        let g = luma(p);
        for v in p.iter_mut() {
            *v = (g + saturation * (*v - g)).clamp(0.0, 255.0);
        }
    }
    for (dst, v) in img.iter_mut().zip(px) {
        *dst = v.round() as u8;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn test_image() -> RgbImage {
        RgbImage::from_fn(32, 32, |x, y| Rgb([(x * 8) as u8, (y * 8) as u8, ((x + y) * 4) as u8]))
    }

    #[test]
    fn identity_spec_is_identity() {
        let img = test_image();
        let mut rng = frame_rng(1, "P1", 0, 1);
        assert_eq!(augment_frame(&img, &AugmentationSpec::identity(), &mut rng), img);
    }

    #[test]
    fn forced_flip_mirrors_columns() {
        let img = test_image();
        let spec = AugmentationSpec {
            horizontal_flip_prob: 1.0,
            ..AugmentationSpec::identity()
        };
        let out = augment_frame(&img, &spec, &mut frame_rng(3, "P1", 0, 1));
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(out.get_pixel(31 - x, y), img.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        let img = test_image();
        let spec = AugmentationSpec::default();
        let a = augment_frame(&img, &spec, &mut frame_rng(9, "P1", 4, 2));
        let b = augment_frame(&img, &spec, &mut frame_rng(9, "P1", 4, 2));
        assert_eq!(a, b);
        assert_eq!(a.dimensions(), img.dimensions());
        let c = augment_frame(&img, &spec, &mut frame_rng(9, "P1", 4, 3));
        assert_ne!(a, c);
    }

    #[test]
    fn full_turn_rotation_is_near_identity() {
        let img = test_image();
        let out = warp_affine(&img, 360.0, 0.0, 1.0, (0.0, 0.0));
        let diff: u32 = img
            .as_raw()
            .iter()
            .zip(out.as_raw())
            .map(|(a, b)| (*a as i32 - *b as i32).unsigned_abs())
            .max()
            .unwrap();
        assert!(diff <= 1);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(&[b"a", b"bc"]), derive_seed(&[b"ab", b"c"]));
        assert_eq!(derive_seed(&[b"x"]), derive_seed(&[b"x"]));
    }
}
