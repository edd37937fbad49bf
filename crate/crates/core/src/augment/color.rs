//! Colour jitter: brightness, contrast, saturation and hue in random order.

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::imaging::{hsv_to_rgb, rgb_to_hsv, to_u8};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Maximum hue shift as a fraction of the hue circle.
    pub hue: f64,
}

impl Default for JitterParams {
    fn default() -> Self {
        Self { brightness: 0.8, contrast: 0.8, saturation: 0.8, hue: 0.2 }
    }
}

impl JitterParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("brightness", self.brightness), ("contrast", self.contrast), ("saturation", self.saturation)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("color jitter {name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.hue) {
            return Err(invalid(format!("color jitter hue must be in [0, 1], got {}", self.hue)));
        }
        Ok(())
    }
}

/// Working buffer: interleaved RGB floats.
struct Buf {
    w: u32,
    h: u32,
    v: Vec<f32>,
}

impl Buf {
    fn from(img: &RgbImage) -> Self {
        Self { w: img.width(), h: img.height(), v: img.as_raw().iter().map(|&b| b as f32).collect() }
    }

    fn into_image(self) -> RgbImage {
        RgbImage::from_raw(self.w, self.h, self.v.into_iter().map(to_u8).collect()).expect("buffer size")
    }

    fn clamp(&mut self) {
        for x in &mut self.v {
            *x = x.clamp(0.0, 255.0);
        }
    }

    fn gray(px: &[f32]) -> f32 {
        0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
    }

    fn brightness(&mut self, f: f32) {
        for x in &mut self.v {
            *x *= f;
        }
        self.clamp();
    }

    fn contrast(&mut self, f: f32) {
        let n = (self.v.len() / 3).max(1) as f32;
        let mean: f32 = self.v.chunks_exact(3).map(Self::gray).sum::<f32>() / n;
        for x in &mut self.v {
            *x = f * *x + (1.0 - f) * mean;
        }
        self.clamp();
    }

    fn saturation(&mut self, f: f32) {
        for px in self.v.chunks_exact_mut(3) {
            let g = Self::gray(px);
            for c in px.iter_mut() {
                *c = f * *c + (1.0 - f) * g;
            }
        }
        self.clamp();
    }

    fn hue(&mut self, shift: f32) {
        if shift == 0.0 {
            return;
        }
        for px in self.v.chunks_exact_mut(3) {
            let (h, s, v) = rgb_to_hsv(px[0] / 255.0, px[1] / 255.0, px[2] / 255.0);
            let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
            px[0] = r * 255.0;
            px[1] = g * 255.0;
            px[2] = b * 255.0;
        }
        self.clamp();
    }
}

pub fn adjust_brightness(img: &RgbImage, factor: f64) -> RgbImage {
    let mut b = Buf::from(img);
    b.brightness(factor as f32);
    b.into_image()
}

pub fn adjust_contrast(img: &RgbImage, factor: f64) -> RgbImage {
    let mut b = Buf::from(img);
    b.contrast(factor as f32);
    b.into_image()
}

pub fn adjust_saturation(img: &RgbImage, factor: f64) -> RgbImage {
    let mut b = Buf::from(img);
    b.saturation(factor as f32);
    b.into_image()
}

pub fn adjust_hue(img: &RgbImage, shift: f64) -> RgbImage {
    let mut b = Buf::from(img);
    b.hue(shift as f32);
    b.into_image()
}

fn factor<R: Rng + ?Sized>(v: f64, rng: &mut R) -> f32 {
    let (lo, hi) = ((1.0 - v).max(0.0), 1.0 + v);
    if hi > lo {
        rng.random_range(lo..=hi) as f32
    } else {
        1.0
    }
}

/// Applies the four adjustments in a random order. The caller decides whether
/// the jitter fires at all.
pub fn color_jitter<R: Rng + ?Sized>(img: &RgbImage, p: &JitterParams, rng: &mut R) -> Result<RgbImage> {
    p.validate()?;
    let b = factor(p.brightness, rng);
    let c = factor(p.contrast, rng);
    let s = factor(p.saturation, rng);
    let h = if p.hue > 0.0 { rng.random_range(-p.hue..=p.hue) as f32 } else { 0.0 };
    let mut order = [0u8, 1, 2, 3];
    order.shuffle(rng);
    let mut buf = Buf::from(img);
    for op in order {
        match op {
            0 if b != 1.0 => buf.brightness(b),
            1 if c != 1.0 => buf.contrast(c),
            2 if s != 1.0 => buf.saturation(s),
            3 => buf.hue(h),
            _ => {}
        }
    }
    Ok(buf.into_image())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textured() -> RgbImage {
        RgbImage::from_fn(16, 16, |x, y| Rgb([(x * 15) as u8, (y * 13 + 20) as u8, ((x + y) * 7) as u8]))
    }

    #[test]
    fn zero_magnitudes_are_identity() {
        let img = textured();
        let p = JitterParams { brightness: 0.0, contrast: 0.0, saturation: 0.0, hue: 0.0 };
        let out = color_jitter(&img, &p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(crate::imaging::max_abs_diff(&img, &out).unwrap() <= 1);
    }

    #[test]
    fn brightness_two_doubles_constant() {
        let img = RgbImage::from_pixel(4, 4, Rgb([50, 50, 50]));
        assert!(adjust_brightness(&img, 2.0).pixels().all(|p| p.0 == [100, 100, 100]));
    }

    #[test]
    fn output_stays_in_range_and_hue_validated() {
        let img = textured();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let strong = JitterParams { brightness: 5.0, contrast: 5.0, saturation: 5.0, hue: 0.5 };
        for _ in 0..50 {
            color_jitter(&img, &strong, &mut rng).unwrap();
        }
        let bad = JitterParams { hue: 1.5, ..Default::default() };
        assert!(color_jitter(&img, &bad, &mut rng).is_err());
    }

    #[test]
    fn zero_saturation_is_gray() {
        let img = textured();
        let out = adjust_saturation(&img, 0.0);
        for p in out.pixels() {
            assert!(p[0].abs_diff(p[1]) <= 1 && p[1].abs_diff(p[2]) <= 1);
        }
    }
}
