use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::imaging::resize_region;
use crate::Result;

/// Pixel box selected by a crop, in source coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl CropBox {
    pub fn area_fraction(&self, src_w: u32, src_h: u32) -> f64 {
        (self.width as f64 * self.height as f64) / (src_w as f64 * src_h as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropParams {
    pub scale_min: f64,
    pub scale_max: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub size: u32,
}

impl CropParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max <= 1.0) {
            return Err(invalid(format!(
                "crop scale range [{}, {}] must satisfy 0 < min <= max <= 1",
                self.scale_min, self.scale_max
            )));
        }
        if !(self.ratio_min > 0.0 && self.ratio_min <= self.ratio_max) {
            return Err(invalid("crop aspect ratio range must satisfy 0 < min <= max"));
        }
        if self.size == 0 {
            return Err(invalid("crop output size must be positive"));
        }
        Ok(())
    }
}

/// Draws a crop box of relative area in `[scale_min, scale_max]` and log-uniform
/// aspect ratio. Falls back to the largest centred square within the scale
/// range after ten rejected draws.
pub fn sample_crop_box<R: Rng + ?Sized>(w: u32, h: u32, p: &CropParams, rng: &mut R) -> CropBox {
    let area = w as f64 * h as f64;
    let in_range = |cw: u32, ch: u32| {
        let f = cw as f64 * ch as f64 / area;
        f >= p.scale_min - 1e-12 && f <= p.scale_max + 1e-12
    };
    let (log_lo, log_hi) = (p.ratio_min.ln(), p.ratio_max.ln());
    for _ in 0..10 {
        let target = area * if p.scale_min < p.scale_max { rng.random_range(p.scale_min..=p.scale_max) } else { p.scale_min };
        let ratio = if log_lo < log_hi { rng.random_range(log_lo..=log_hi).exp() } else { p.ratio_min };
        let cw = (target * ratio).sqrt().round() as u32;
        let ch = (target / ratio).sqrt().round() as u32;
        if cw > 0 && ch > 0 && cw <= w && ch <= h && in_range(cw, ch) {
            let x = rng.random_range(0..=w - cw);
            let y = rng.random_range(0..=h - ch);
            return CropBox { x, y, width: cw, height: ch };
        }
    }
    let mut side = ((p.scale_max * area).sqrt().floor() as u32).min(w).min(h).max(1);
    while side > 1 && !in_range(side, side) && (side as f64).powi(2) / area > p.scale_max {
        side -= 1;
    }
    CropBox { x: (w - side) / 2, y: (h - side) / 2, width: side, height: side }
}

/// Random resized crop. Returns the resampled image and the crop box used.
pub fn random_resized_crop<R: Rng + ?Sized>(img: &RgbImage, p: &CropParams, rng: &mut R) -> Result<(RgbImage, CropBox)> {
    p.validate()?;
    let (w, h) = img.dimensions();
    let b = sample_crop_box(w, h, p, rng);
    Ok((resize_region(img, b.x, b.y, b.width, b.height, p.size, p.size), b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::resize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textured(n: u32) -> RgbImage {
        RgbImage::from_fn(n, n, |x, y| image::Rgb([(x * 3 % 256) as u8, (y * 5 % 256) as u8, ((x ^ y) % 256) as u8]))
    }

    #[test]
    fn full_scale_square_is_a_plain_resize() {
        let img = textured(256);
        let p = CropParams { scale_min: 1.0, scale_max: 1.0, ratio_min: 1.0, ratio_max: 1.0, size: 224 };
        let (out, b) = random_resized_crop(&img, &p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b, CropBox { x: 0, y: 0, width: 256, height: 256 });
        assert_eq!(out, resize(&img, 224, 224));
    }

    #[test]
    fn shape_and_area_over_many_draws() {
        let img = textured(256);
        let p = CropParams { scale_min: 0.2, scale_max: 1.0, ratio_min: 0.75, ratio_max: 4.0 / 3.0, size: 224 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let b = sample_crop_box(256, 256, &p, &mut rng);
            let f = b.area_fraction(256, 256);
            assert!((0.2..=1.0).contains(&f), "{f}");
            assert!(b.x + b.width <= 256 && b.y + b.height <= 256);
        }
        for _ in 0..20 {
            let (out, _) = random_resized_crop(&img, &p, &mut rng).unwrap();
            assert_eq!(out.dimensions(), (224, 224));
        }
    }

    #[test]
    fn invalid_scale_rejected() {
        let img = textured(16);
        let p = CropParams { scale_min: 0.0, scale_max: 1.0, ratio_min: 1.0, ratio_max: 1.0, size: 8 };
        assert!(random_resized_crop(&img, &p, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let p = CropParams { scale_min: 0.9, scale_max: 0.5, ..p };
        assert!(random_resized_crop(&img, &p, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
