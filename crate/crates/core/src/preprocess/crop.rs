use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{CanonicalEyeLandmarks, PreprocessError};

/// Crop geometry in units of the intercanthal distance `d`, measured from
/// the midpoint of the inner canthi. The defaults keep the brows and the
/// forehead above them and cut just below the eyes, leaving out the masked
/// lower face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropSpec {
    pub half_width_factor: f64,
    pub above_factor: f64,
    pub below_factor: f64,
    pub output_size: u32,
}

impl Default for CropSpec {
    fn default() -> Self {
        Self {
            half_width_factor: 2.0,
            above_factor: 2.0,
            below_factor: 1.0,
            output_size: 224,
        }
    }
}

impl CropSpec {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let factors = [self.half_width_factor, self.above_factor, self.below_factor];
        if factors.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(PreprocessError::InvalidSpec(format!(
                "crop factors must be positive: {factors:?}"
            )));
        }
        if self.output_size < 16 {
            return Err(PreprocessError::InvalidSpec(format!(
                "output_size {} below 16",
                self.output_size
            )));
        }
        Ok(())
    }
}

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl CropBox {
    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }
}

pub fn intercanthal_distance(lm: &CanonicalEyeLandmarks) -> Result<f64, PreprocessError> {
    let d = lm.left_inner_canthus.distance(&lm.right_inner_canthus);
    if !(d >= 1.0) {
        return Err(PreprocessError::DegenerateGeometry(format!(
            "intercanthal distance {d} below one pixel"
        )));
    }
    Ok(d)
}

pub fn compute_crop_box(
    lm: &CanonicalEyeLandmarks,
    spec: &CropSpec,
    image_size: (u32, u32),
) -> Result<CropBox, PreprocessError> {
    spec.validate()?;
    let d = intercanthal_distance(lm)?;
    let m = lm.inner_midpoint();
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let clamp = |v: f64, hi: f64| v.clamp(0.0, hi).round() as u32;
    let bx = CropBox {
        x0: clamp(m.x - spec.half_width_factor * d, w),
        x1: clamp(m.x + spec.half_width_factor * d, w),
        y0: clamp(m.y - spec.above_factor * d, h),
        y1: clamp(m.y + spec.below_factor * d, h),
    };
    if bx.width() == 0 || bx.height() == 0 {
        return Err(PreprocessError::DegenerateGeometry(format!(
            "crop box {bx:?} is empty after clamping to {}x{}",
            image_size.0, image_size.1
        )));
    }
    Ok(bx)
}

/// Separable resampling taps for one axis: a triangle kernel whose support
/// widens with the downscale factor, so shrinking averages over the source
/// footprint. A 1:1 mapping reproduces the input exactly.
fn axis_taps(src_start: u32, src_len: u32, out_len: u32) -> Vec<(usize, Vec<f32>)> {
    let scale = src_len as f64 / out_len as f64;
    let support = scale.max(1.0);
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as u32;
            let hi = ((center + support).ceil() as u32).min(src_len);
            let mut weights: Vec<f32> = (lo..hi)
                .map(|i| {
                    let dist = ((i as f64 + 0.5) - center).abs() / support;
                    (1.0 - dist).max(0.0) as f32
                })
                .collect();
            let total: f32 = weights.iter().sum();
            if total > 0.0 {
                weights.iter_mut().for_each(|w| *w /= total);
            } else {
                // center outside every tap: nearest pixel
                let nearest = (center.floor() as u32).min(src_len - 1);
                return ((src_start + nearest) as usize, vec![1.0]);
            }
            ((src_start + lo) as usize, weights)
        })
        .collect()
}

pub fn crop_and_resize(
    frame: &RgbImage,
    bx: &CropBox,
    output_size: u32,
) -> Result<RgbImage, PreprocessError> {
    if bx.width() == 0 || bx.height() == 0 || bx.x1 > frame.width() || bx.y1 > frame.height() {
        return Err(PreprocessError::EmptyBox);
    }
    if output_size == 0 {
        return Err(PreprocessError::InvalidSpec("output_size must be positive".into()));
    }
    let xt = axis_taps(bx.x0, bx.width(), output_size);
    let yt = axis_taps(bx.y0, bx.height(), output_size);
    let fw = frame.width() as usize;
    let raw = frame.as_raw();

    // horizontal pass over the rows the vertical pass will touch
    let rows = bx.height() as usize;
    let mut tmp = vec![0f32; rows * output_size as usize * 3];
    for r in 0..rows {
        let sy = bx.y0 as usize + r;
        for (ox, (start, w)) in xt.iter().enumerate() {
            let mut acc = [0f32; 3];
            for (k, wk) in w.iter().enumerate() {
                let base = (sy * fw + start + k) * 3;
                for c in 0..3 {
                    acc[c] += wk * raw[base + c] as f32;
                }
            }
            let o = (r * output_size as usize + ox) * 3;
            tmp[o..o + 3].copy_from_slice(&acc);
        }
    }

    let n = output_size as usize;
    let mut out = vec![0u8; n * n * 3];
    for (oy, (start, w)) in yt.iter().enumerate() {
        let r0 = start - bx.y0 as usize;
        for ox in 0..n {
            let mut acc = [0f32; 3];
            for (k, wk) in w.iter().enumerate() {
                let base = ((r0 + k) * n + ox) * 3;
                for c in 0..3 {
                    acc[c] += wk * tmp[base + c];
                }
            }
            let o = (oy * n + ox) * 3;
            for c in 0..3 {
                out[o + c] = acc[c].round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(RgbImage::from_raw(output_size, output_size, out).expect("buffer sized for output"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::Point;
    use image::Rgb;

    fn lm(li: (f64, f64), ri: (f64, f64)) -> CanonicalEyeLandmarks {
        CanonicalEyeLandmarks {
            left_inner_canthus: Point::new(li.0, li.1),
            right_inner_canthus: Point::new(ri.0, ri.1),
            left_outer_canthus: Point::new(li.0 - 30.0, li.1),
            right_outer_canthus: Point::new(ri.0 + 30.0, ri.1),
        }
    }

    #[test]
    fn intercanthal_examples() {
        assert_eq!(intercanthal_distance(&lm((100.0, 100.0), (200.0, 100.0))).unwrap(), 100.0);
        assert_eq!(intercanthal_distance(&lm((0.0, 0.0), (30.0, 40.0))).unwrap(), 50.0);
        assert!(matches!(
            intercanthal_distance(&lm((5.0, 5.0), (5.0, 5.0))),
            Err(PreprocessError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn crop_box_examples() {
        let l = lm((100.0, 100.0), (200.0, 100.0));
        let bx = compute_crop_box(&l, &CropSpec::default(), (1920, 1080)).unwrap();
        assert_eq!(bx, CropBox { x0: 0, y0: 0, x1: 350, y1: 200 });
        let narrow = CropSpec {
            half_width_factor: 0.5,
            ..CropSpec::default()
        };
        let bx = compute_crop_box(&l, &narrow, (1920, 1080)).unwrap();
        assert_eq!(bx, CropBox { x0: 100, y0: 0, x1: 200, y1: 200 });
    }

    #[test]
    fn crop_box_outside_image() {
        let l = lm((500.0, 500.0), (600.0, 500.0));
        assert!(matches!(
            compute_crop_box(&l, &CropSpec::default(), (10, 10)),
            Err(PreprocessError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn identity_resize_is_pixel_exact() {
        let img = RgbImage::from_fn(300, 260, |x, y| Rgb([(x * 7 % 256) as u8, (y * 3 % 256) as u8, ((x ^ y) % 256) as u8]));
        let bx = CropBox { x0: 20, y0: 10, x1: 244, y1: 234 };
        let out = crop_and_resize(&img, &bx, 224).unwrap();
        for y in 0..224 {
            for x in 0..224 {
                assert_eq!(out.get_pixel(x, y), img.get_pixel(x + 20, y + 10));
            }
        }
    }

    #[test]
    fn constant_field_stays_constant() {
        let img = RgbImage::from_pixel(500, 500, Rgb([37, 120, 211]));
        let bx = CropBox { x0: 10, y0: 20, x1: 458, y1: 468 };
        let out = crop_and_resize(&img, &bx, 224).unwrap();
        assert!(out.pixels().all(|p| *p == Rgb([37, 120, 211])));
    }

    #[test]
    fn anisotropic_box_maps_corners() {
        // 100x300 box with 10x30 colored marker blocks in each corner
        let mut img = RgbImage::from_pixel(200, 400, Rgb([0, 0, 0]));
        let bx = CropBox { x0: 50, y0: 40, x1: 150, y1: 340 };
        let marks = [
            (0u32, 0u32, Rgb([255, 0, 0])),
            (90, 0, Rgb([0, 255, 0])),
            (0, 270, Rgb([0, 0, 255])),
            (90, 270, Rgb([255, 255, 0])),
        ];
        for (mx, my, c) in marks {
            for y in 0..30 {
                for x in 0..10 {
                    img.put_pixel(bx.x0 + mx + x, bx.y0 + my + y, c);
                }
            }
        }
        let out = crop_and_resize(&img, &bx, 224).unwrap();
        assert_eq!(out.dimensions(), (224, 224));
        assert_eq!(*out.get_pixel(0, 0), Rgb([255, 0, 0]));
        assert_eq!(*out.get_pixel(223, 0), Rgb([0, 255, 0]));
        assert_eq!(*out.get_pixel(0, 223), Rgb([0, 0, 255]));
        assert_eq!(*out.get_pixel(223, 223), Rgb([255, 255, 0]));
        assert_eq!(*out.get_pixel(112, 112), Rgb([0, 0, 0]));
    }

    #[test]
    fn box_outside_frame_is_empty_box() {
        let img = RgbImage::new(50, 50);
        let bx = CropBox { x0: 10, y0: 10, x1: 60, y1: 40 };
        assert!(matches!(crop_and_resize(&img, &bx, 32), Err(PreprocessError::EmptyBox)));
    }
}
