use image::RgbImage;
use rand::Rng;

use crate::error::invalid;
use crate::imaging::to_u8;
use crate::Result;

/// Odd kernel width for a given sigma: `2·ceil(3σ) + 1`.
pub fn kernel_size(sigma: f64) -> usize {
    2 * (3.0 * sigma).ceil() as usize + 1
}

/// Normalised 1-D Gaussian kernel.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let k = kernel_size(sigma);
    let r = (k / 2) as f64;
    let raw: Vec<f64> = (0..k).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / s) as f32).collect()
}

/// Reflect without repeating the edge sample: `dcb|abcd|cba`.
#[inline]
pub(crate) fn reflect101(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Separable Gaussian blur with reflected borders.
pub fn blur_with_sigma(img: &RgbImage, sigma: f64) -> Result<RgbImage> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("blur sigma must be positive, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let src = img.as_raw();
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (k, kv) in kernel.iter().enumerate() {
                let sx = reflect101(x + k as i64 - r, w);
                let base = ((y * w) as usize + sx) * 3;
                for c in 0..3 {
                    acc[c] += kv * src[base + c] as f32;
                }
            }
            let base = ((y * w + x) as usize) * 3;
            tmp[base..base + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f32; 3];
            for (k, kv) in kernel.iter().enumerate() {
                let sy = reflect101(y + k as i64 - r, h);
                let base = (sy * w as usize + x as usize) * 3;
                for c in 0..3 {
                    acc[c] += kv * tmp[base + c];
                }
            }
            let base = ((y * w + x) as usize) * 3;
            for c in 0..3 {
                out[base + c] = to_u8(acc[c]);
            }
        }
    }
    Ok(RgbImage::from_raw(img.width(), img.height(), out).expect("buffer size"))
}

/// Blur with `σ ~ U[sigma_min, sigma_max]`. Returns the sigma used.
pub fn gaussian_blur<R: Rng + ?Sized>(img: &RgbImage, sigma_min: f64, sigma_max: f64, rng: &mut R) -> Result<(RgbImage, f64)> {
    if !(sigma_min > 0.0 && sigma_max >= sigma_min) {
        return Err(invalid(format!("blur sigma range [{sigma_min}, {sigma_max}] must be positive and ordered")));
    }
    let sigma = if sigma_max > sigma_min { rng.random_range(sigma_min..=sigma_max) } else { sigma_min };
    Ok((blur_with_sigma(img, sigma)?, sigma))
}
