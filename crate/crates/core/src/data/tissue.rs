//! Otsu tissue detection on a low-magnification slide level.

use image::RgbImage;

use crate::imaging::gray_u8;

/// Row-major boolean raster. `true` marks tissue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; (width as usize) * (height as usize)] }
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Self { width, height, bits: vec![value; (width as usize) * (height as usize)] }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y as usize) * (self.width as usize) + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.bits[(y as usize) * w + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Fraction of the rectangle `[x0, x0+w) × [y0, y0+h)`, given in a frame that
    /// is `scale` times finer than the mask, covered by tissue. The mask is treated
    /// as nearest-neighbour upscaled, so partial mask pixels contribute by area.
    pub fn coverage(&self, x0: f64, y0: f64, w: f64, h: f64, scale: f64) -> f64 {
        let mx0 = x0 / scale;
        let my0 = y0 / scale;
        let mx1 = (x0 + w) / scale;
        let my1 = (y0 + h) / scale;
        let area = (mx1 - mx0) * (my1 - my0);
        if area <= 0.0 {
            return 0.0;
        }
        let cx0 = mx0.floor().max(0.0) as u32;
        let cy0 = my0.floor().max(0.0) as u32;
        let cx1 = (mx1.ceil() as u32).min(self.width);
        let cy1 = (my1.ceil() as u32).min(self.height);
        let mut covered = 0.0;
        for my in cy0..cy1 {
            let oy = (my1.min(my as f64 + 1.0) - my0.max(my as f64)).max(0.0);
            if oy == 0.0 {
                continue;
            }
            for mx in cx0..cx1 {
                if self.get(mx, my) {
                    let ox = (mx1.min(mx as f64 + 1.0) - mx0.max(mx as f64)).max(0.0);
                    covered += ox * oy;
                }
            }
        }
        covered / area
    }
}

/// 256-bin grayscale histogram.
pub fn gray_histogram(image: &RgbImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for p in image.pixels() {
        hist[gray_u8(p) as usize] += 1;
    }
    hist
}

/// Otsu decision boundary for a histogram.
///
/// Splitting at integer `t` puts values `<= t` in the dark class. Between-class
/// variance is often flat over a run of `t`; the returned boundary is the centre
/// of the maximising run, shifted by half a level so that values strictly below
/// it are dark. This makes the boundary of an inverted histogram exactly
/// `255 - boundary`. Returns `None` for histograms with fewer than two occupied
/// levels.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<f64> {
    let total: u64 = hist.iter().sum();
    if total == 0 || hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let total_f = total as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();

    let mut variances = [f64::NEG_INFINITY; 256];
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for t in 0..255usize {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total_f - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        variances[t] = w0 * w1 * (mu0 - mu1) * (mu0 - mu1) / (total_f * total_f);
    }
    let best = variances.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tol = best.abs() * 1e-12;
    let first = variances.iter().position(|&v| v >= best - tol)?;
    let last = variances.iter().rposition(|&v| v >= best - tol)?;
    Some((first + last) as f64 / 2.0 + 0.5)
}

/// Tissue mask of a low-magnification RGB image: pixels darker than the Otsu
/// boundary. A single-intensity image yields an empty mask.
pub fn compute_tissue_mask(low_mag: &RgbImage) -> BinaryMask {
    let (w, h) = low_mag.dimensions();
    let hist = gray_histogram(low_mag);
    match otsu_threshold(&hist) {
        None => BinaryMask::new(w, h),
        Some(boundary) => BinaryMask::from_fn(w, h, |x, y| (gray_u8(low_mag.get_pixel(x, y)) as f64) < boundary),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    /// Exhaustive scan: every `t` whose between-class variance is maximal.
    fn argmax_thresholds(hist: &[u64; 256]) -> Vec<usize> {
        let total: f64 = hist.iter().map(|&c| c as f64).sum();
        let var = |t: usize| {
            let (mut w0, mut s0, mut w1, mut s1) = (0.0, 0.0, 0.0, 0.0);
            for (v, &c) in hist.iter().enumerate() {
                if v <= t {
                    w0 += c as f64;
                    s0 += v as f64 * c as f64;
                } else {
                    w1 += c as f64;
                    s1 += v as f64 * c as f64;
                }
            }
            if w0 == 0.0 || w1 == 0.0 {
                return f64::NEG_INFINITY;
            }
            (w0 / total) * (w1 / total) * (s0 / w0 - s1 / w1).powi(2)
        };
        let vars: Vec<f64> = (0..256).map(var).collect();
        let best = vars.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (0..256).filter(|&t| vars[t] >= best - best * 1e-12).collect()
    }

    fn half_and_half(dark: u8, light: u8) -> RgbImage {
        RgbImage::from_fn(20, 10, |x, _| if x < 10 { Rgb([dark; 3]) } else { Rgb([light; 3]) })
    }

    #[test]
    fn uniform_white_is_all_background() {
        let img = RgbImage::from_pixel(16, 16, Rgb([255, 255, 255]));
        let mask = compute_tissue_mask(&img);
        assert_eq!(mask.count(), 0);
        assert_eq!((mask.width(), mask.height()), (16, 16));
    }

    #[test]
    fn two_level_image_splits_between_levels() {
        let img = half_and_half(20, 240);
        let hist = gray_histogram(&img);
        let boundary = otsu_threshold(&hist).unwrap();
        assert!(boundary > 20.0 && boundary < 240.0, "{boundary}");
        let plateau = argmax_thresholds(&hist);
        assert!(boundary - 0.5 >= *plateau.first().unwrap() as f64);
        assert!(boundary - 0.5 <= *plateau.last().unwrap() as f64);
        let mask = compute_tissue_mask(&img);
        assert_eq!(mask.count(), 100);
        assert!(mask.get(0, 0) && !mask.get(19, 0));
    }

    #[test]
    fn inverted_image_mirrors_boundary() {
        let img = RgbImage::from_fn(32, 32, |x, y| Rgb([((x * 7 + y * 3) % 200 + 30) as u8; 3]));
        let inv = RgbImage::from_fn(32, 32, |x, y| {
            let p = img.get_pixel(x, y);
            Rgb([255 - p[0], 255 - p[1], 255 - p[2]])
        });
        let t = otsu_threshold(&gray_histogram(&img)).unwrap();
        let ti = otsu_threshold(&gray_histogram(&inv)).unwrap();
        assert!((t + ti - 255.0).abs() < 1e-9, "{t} {ti}");
        let plateau = argmax_thresholds(&gray_histogram(&inv));
        assert!(ti - 0.5 >= *plateau.first().unwrap() as f64);
        assert!(ti - 0.5 <= *plateau.last().unwrap() as f64);
    }

    #[test]
    fn coverage_is_area_weighted() {
        let mask = BinaryMask::from_fn(4, 4, |x, _| x < 2);
        assert!((mask.coverage(0.0, 0.0, 16.0, 16.0, 4.0) - 0.5).abs() < 1e-12);
        assert!((mask.coverage(0.0, 0.0, 8.0, 8.0, 4.0) - 1.0).abs() < 1e-12);
        assert!((mask.coverage(6.0, 0.0, 4.0, 4.0, 4.0) - 0.5).abs() < 1e-12);
    }
}
