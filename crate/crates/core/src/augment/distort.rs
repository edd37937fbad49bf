//! Grid distortion: piecewise-linear warping of a regular grid.

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::blur::reflect101;
use crate::error::invalid;
use crate::imaging::to_u8;
use crate::Result;

/// Out-of-range sampling policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderMode {
    /// `fedcba|abcdef|fedcba`, OpenCV border code 2.
    #[default]
    Reflect,
    /// `fedcb|abcdef|edcba`, OpenCV border code 4.
    Reflect101,
}

impl BorderMode {
    #[inline]
    fn index(self, i: i64, n: i64) -> usize {
        match self {
            BorderMode::Reflect101 => reflect101(i, n),
            BorderMode::Reflect => {
                let period = 2 * n;
                let m = i.rem_euclid(period);
                (if m >= n { period - 1 - m } else { m }) as usize
            }
        }
    }
}

/// Source coordinate for every destination coordinate along one axis.
///
/// The axis is cut into segments of `len / num_steps` pixels; the far end of
/// each segment is displaced by its step factor, and coordinates inside a
/// segment are linearly interpolated. The final segment always ends at `len`.
/// All factors equal to one give the identity map.
pub fn axis_map(len: u32, num_steps: u32, factors: &[f32]) -> Vec<f32> {
    let step = (len / num_steps).max(1) as usize;
    let len = len as usize;
    let mut map = vec![0.0f32; len];
    let mut prev = 0.0f32;
    let mut idx = 0;
    let mut start = 0usize;
    while start < len {
        let mut end = start + step;
        let cur = if end >= len {
            end = len;
            len as f32
        } else {
            prev + step as f32 * factors.get(idx).copied().unwrap_or(1.0)
        };
        let n = (end - start) as f32;
        for (k, m) in map[start..end].iter_mut().enumerate() {
            *m = prev + (cur - prev) * k as f32 / n;
        }
        prev = cur;
        start = end;
        idx += 1;
    }
    map
}

/// Remaps `img` through separable axis maps with bilinear interpolation.
pub fn remap(img: &RgbImage, map_x: &[f32], map_y: &[f32], border: BorderMode) -> RgbImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let src = img.as_raw();
    let mut out = RgbImage::new(img.width(), img.height());
    for (y, &sy) in map_y.iter().enumerate() {
        let y0 = sy.floor();
        let fy = sy - y0;
        let (ya, yb) = (border.index(y0 as i64, h), border.index(y0 as i64 + 1, h));
        for (x, &sx) in map_x.iter().enumerate() {
            let x0 = sx.floor();
            let fx = sx - x0;
            let (xa, xb) = (border.index(x0 as i64, w), border.index(x0 as i64 + 1, w));
            let at = |xx: usize, yy: usize, c: usize| src[(yy * w as usize + xx) * 3 + c] as f32;
            let mut px = [0u8; 3];
            for c in 0..3 {
                let top = at(xa, ya, c) * (1.0 - fx) + at(xb, ya, c) * fx;
                let bot = at(xa, yb, c) * (1.0 - fx) + at(xb, yb, c) * fx;
                px[c] = to_u8(top * (1.0 - fy) + bot * fy);
            }
            out.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortParams {
    pub num_steps: u32,
    pub distort_limit: f64,
    #[serde(default)]
    pub border: BorderMode,
}

impl Default for DistortParams {
    fn default() -> Self {
        Self { num_steps: 9, distort_limit: 0.2, border: BorderMode::Reflect }
    }
}

pub fn grid_distort<R: Rng + ?Sized>(img: &RgbImage, p: &DistortParams, rng: &mut R) -> Result<RgbImage> {
    if p.num_steps < 1 {
        return Err(invalid("grid distortion needs num_steps >= 1"));
    }
    if !(0.0..1.0).contains(&p.distort_limit) {
        return Err(invalid("distort_limit must be in [0, 1)"));
    }
    let limit = p.distort_limit as f32;
    let mut draw = |n: u32| -> Vec<f32> {
        (0..=n).map(|_| if limit > 0.0 { 1.0 + rng.random_range(-limit..=limit) } else { 1.0 }).collect()
    };
    let fx = draw(p.num_steps);
    let fy = draw(p.num_steps);
    let mx = axis_map(img.width(), p.num_steps, &fx);
    let my = axis_map(img.height(), p.num_steps, &fy);
    Ok(remap(img, &mx, &my, p.border))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textured(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 9) as u8, (y * 11) as u8, ((x * y) % 251) as u8]))
    }

    #[test]
    fn zero_limit_is_identity() {
        let img = textured(32, 27);
        let p = DistortParams { distort_limit: 0.0, ..Default::default() };
        let out = grid_distort(&img, &p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(crate::imaging::max_abs_diff(&img, &out).unwrap() <= 1);
    }

    #[test]
    fn identity_map_is_exact() {
        let m = axis_map(32, 9, &[1.0; 10]);
        assert!(m.iter().enumerate().all(|(i, &v)| (v - i as f32).abs() < 1e-5));
    }

    #[test]
    fn shape_kept_and_constant_preserved() {
        let img = textured(40, 33);
        let flat = RgbImage::from_pixel(40, 33, Rgb([5, 99, 200]));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            assert_eq!(grid_distort(&img, &DistortParams::default(), &mut rng).unwrap().dimensions(), (40, 33));
            assert_eq!(grid_distort(&flat, &DistortParams::default(), &mut rng).unwrap(), flat);
        }
    }

    #[test]
    fn maps_start_at_zero_and_stay_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let f: Vec<f32> = (0..10).map(|_| 1.0 + rng.random_range(-0.2f32..=0.2)).collect();
            let m = axis_map(224, 9, &f);
            assert_eq!(m[0], 0.0);
            assert!(m.iter().all(|&v| (0.0..=224.0 * 1.2).contains(&v)));
        }
    }

    #[test]
    fn border_modes() {
        assert_eq!(BorderMode::Reflect.index(-1, 4), 0);
        assert_eq!(BorderMode::Reflect.index(4, 4), 3);
        assert_eq!(BorderMode::Reflect101.index(-1, 4), 1);
        assert_eq!(BorderMode::Reflect101.index(4, 4), 2);
    }

    #[test]
    fn zero_steps_rejected() {
        let img = textured(8, 8);
        let p = DistortParams { num_steps: 0, ..Default::default() };
        assert!(grid_distort(&img, &p, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
