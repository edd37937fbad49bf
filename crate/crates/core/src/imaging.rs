//! Small raster helpers shared by the data pipeline and the augmentations.

use image::{Rgb, RgbImage};
use ndarray::{Array4, ArrayViewMut3};

/// ITU-R BT.601 luma of an RGB pixel, in `[0, 255]`.
#[inline]
pub fn luma(p: &Rgb<u8>) -> f32 {
    0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32
}

/// Integer grayscale value used for histogramming.
#[inline]
pub fn gray_u8(p: &Rgb<u8>) -> u8 {
    luma(p).round().clamp(0.0, 255.0) as u8
}

#[inline]
pub(crate) fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// RGB in `[0, 1]` to HSV with hue as a fraction of the circle.
pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return (0.0, s, v);
    }
    let h = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h / 6.0, s, v)
}

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Bilinear sample of channel values at continuous pixel-centre coordinates,
/// clamping to the edge.
pub fn sample_bilinear(img: &RgbImage, x: f32, y: f32) -> [f32; 3] {
    let (w, h) = img.dimensions();
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let p00 = img.get_pixel(x0, y0);
    let p10 = img.get_pixel(x1, y0);
    let p01 = img.get_pixel(x0, y1);
    let p11 = img.get_pixel(x1, y1);
    let mut out = [0.0f32; 3];
    for c in 0..3 {
        let top = p00[c] as f32 * (1.0 - fx) + p10[c] as f32 * fx;
        let bottom = p01[c] as f32 * (1.0 - fx) + p11[c] as f32 * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Bilinear resampling of the sub-rectangle `(x, y, w, h)` of `img` to
/// `out_w × out_h`, using half-pixel centres.
pub fn resize_region(img: &RgbImage, x: u32, y: u32, w: u32, h: u32, out_w: u32, out_h: u32) -> RgbImage {
    if x == 0 && y == 0 && w == img.width() && h == img.height() && w == out_w && h == out_h {
        return img.clone();
    }
    let sx = w as f32 / out_w as f32;
    let sy = h as f32 / out_h as f32;
    let mut out = RgbImage::new(out_w, out_h);
    for oy in 0..out_h {
        let src_y = y as f32 + (oy as f32 + 0.5) * sy - 0.5;
        let src_y = src_y.clamp(y as f32, (y + h - 1) as f32);
        for ox in 0..out_w {
            let src_x = x as f32 + (ox as f32 + 0.5) * sx - 0.5;
            let src_x = src_x.clamp(x as f32, (x + w - 1) as f32);
            let v = sample_bilinear(img, src_x, src_y);
            out.put_pixel(ox, oy, Rgb([to_u8(v[0]), to_u8(v[1]), to_u8(v[2])]));
        }
    }
    out
}

pub fn resize(img: &RgbImage, out_w: u32, out_h: u32) -> RgbImage {
    resize_region(img, 0, 0, img.width(), img.height(), out_w, out_h)
}

/// Per-channel normalisation applied before images enter a network.
pub const CHANNEL_MEAN: [f32; 3] = [0.5, 0.5, 0.5];
pub const CHANNEL_STD: [f32; 3] = [0.25, 0.25, 0.25];

fn write_chw(img: &RgbImage, mut dst: ArrayViewMut3<f32>) {
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            dst[[c, y as usize, x as usize]] = (p[c] as f32 / 255.0 - CHANNEL_MEAN[c]) / CHANNEL_STD[c];
        }
    }
}

/// Stacks equally sized images into a normalised `N × 3 × H × W` batch.
pub fn images_to_batch<'a, I>(images: I) -> crate::Result<Array4<f32>>
where
    I: IntoIterator<Item = &'a RgbImage>,
{
    let images: Vec<&RgbImage> = images.into_iter().collect();
    let Some(first) = images.first() else {
        return Err(crate::error::invalid("cannot build a batch from zero images"));
    };
    let (w, h) = first.dimensions();
    let mut batch = Array4::<f32>::zeros((images.len(), 3, h as usize, w as usize));
    for (i, img) in images.iter().enumerate() {
        if img.dimensions() != (w, h) {
            return Err(crate::Error::Shape {
                expected: format!("{w}x{h}"),
                actual: format!("{}x{}", img.width(), img.height()),
            });
        }
        write_chw(img, batch.index_axis_mut(ndarray::Axis(0), i));
    }
    Ok(batch)
}

/// Sorted copy of all channel bytes; equal for images that are pixel permutations
/// of one another.
pub fn sorted_values(img: &RgbImage) -> Vec<u8> {
    let mut v = img.as_raw().clone();
    v.sort_unstable();
    v
}

/// Sorted list of whole pixels.
pub fn sorted_pixels(img: &RgbImage) -> Vec<[u8; 3]> {
    let mut v: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
    v.sort_unstable();
    v
}

pub fn max_abs_diff(a: &RgbImage, b: &RgbImage) -> Option<u8> {
    if a.dimensions() != b.dimensions() {
        return None;
    }
    Some(
        a.as_raw()
            .iter()
            .zip(b.as_raw())
            .map(|(x, y)| x.abs_diff(*y))
            .max()
            .unwrap_or(0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_identity_when_sizes_match() {
        let img = RgbImage::from_fn(5, 4, |x, y| Rgb([(x * 10) as u8, (y * 20) as u8, 7]));
        assert_eq!(resize(&img, 5, 4), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = RgbImage::from_pixel(40, 40, Rgb([12, 200, 99]));
        let out = resize(&img, 32, 32);
        assert!(out.pixels().all(|p| p.0 == [12, 200, 99]));
    }

    #[test]
    fn batch_shape_and_normalisation() {
        let img = RgbImage::from_pixel(3, 2, Rgb([255, 0, 128]));
        let b = images_to_batch([&img, &img]).unwrap();
        assert_eq!(b.shape(), &[2, 3, 2, 3]);
        assert!((b[[0, 0, 0, 0]] - 2.0).abs() < 1e-6);
        assert!((b[[1, 1, 1, 2]] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2f32, 0.4f32, 0.9f32), (1.0, 0.0, 0.0), (0.5, 0.5, 0.5), (0.1, 0.8, 0.3)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-5 && (g - g2).abs() < 1e-5 && (b - b2).abs() < 1e-5);
        }
    }

    #[test]
    fn batch_rejects_mixed_sizes() {
        let a = RgbImage::new(2, 2);
        let b = RgbImage::new(3, 2);
        assert!(images_to_batch([&a, &b]).is_err());
    }
}
