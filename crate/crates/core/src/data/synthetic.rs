//! Procedural H&E-like slides with pixel-exact class annotations.
//!
//! A slide is white background plus a tissue area made of overlapping
//! ellipses. The tissue is partitioned into Voronoi regions and each region is
//! assigned a class. Classes share the same stain palette and the same nuclear
//! area fraction; they differ in nucleus size, shape and packing, so the label
//! is carried by texture rather than by mean colour. Each region also receives
//! a random stain variation (hue, saturation, brightness) acting as nuisance.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::slide::InMemorySlide;
use crate::imaging::{hsv_to_rgb, rgb_to_hsv};
use crate::error::invalid;
use crate::imaging::to_u8;
use crate::Result;

/// Label value of non-tissue pixels in a [`LabelMask`].
pub const BACKGROUND_LABEL: u8 = 255;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTexture {
    pub name: String,
    /// Minor semi-axis range of nuclei, in pixels at the base level.
    pub nucleus_radius: (f32, f32),
    /// Major/minor axis ratio range.
    pub elongation: (f32, f32),
    /// Fraction of tissue area covered by nuclei.
    pub nuclear_coverage: f32,
    /// Spatial regularity in `[0, 1]`; 1 places nuclei on a jittered lattice.
    pub regularity: f32,
    /// Added to the region's stroma hue (fraction of the hue circle).
    pub hue_offset: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSlideSpec {
    pub width: u32,
    pub height: u32,
    /// Resolution of the base level.
    pub mpp: f64,
    /// Factor between the base level and the low-magnification level.
    pub low_mag_factor: u32,
    pub classes: Vec<ClassTexture>,
    /// Number of Voronoi regions inside the tissue. Must be at least the
    /// number of classes so that no class gets zero area.
    pub regions: usize,
    /// Approximate fraction of the slide covered by tissue.
    pub tissue_fraction: f32,
    /// Per-region stain variation amplitude in `[0, 1]`.
    pub stain_variation: f32,
    /// Standard deviation of per-pixel noise, in intensity units.
    pub pixel_noise: f32,
}

impl SyntheticSlideSpec {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Desk-scale three-class preset: sparse large nuclei, dense small nuclei,
    /// and elongated spindle nuclei.
    pub fn three_class(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            mpp: 0.5,
            low_mag_factor: 4,
            classes: default_classes(3),
            regions: 12,
            tissue_fraction: 0.6,
            stain_variation: 0.6,
            pixel_noise: 6.0,
        }
    }

    pub fn with_classes(width: u32, height: u32, n_classes: usize) -> Self {
        Self { classes: default_classes(n_classes), regions: (4 * n_classes).max(12), ..Self::three_class(width, height) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(invalid("a synthetic slide needs at least two classes"));
        }
        if self.classes.len() > BACKGROUND_LABEL as usize {
            return Err(invalid("too many classes"));
        }
        if self.regions < self.classes.len() {
            return Err(invalid(format!(
                "{} regions cannot host {} classes; some class would have zero area",
                self.regions,
                self.classes.len()
            )));
        }
        if self.width < 16 || self.height < 16 {
            return Err(invalid("slide must be at least 16x16 pixels"));
        }
        if !(self.tissue_fraction > 0.0 && self.tissue_fraction <= 1.0) {
            return Err(invalid("tissue_fraction must be in (0, 1]"));
        }
        if self.low_mag_factor < 1 || !(self.mpp > 0.0) {
            return Err(invalid("low_mag_factor must be >= 1 and mpp positive"));
        }
        for c in &self.classes {
            if !(c.nucleus_radius.0 > 0.0 && c.nucleus_radius.0 <= c.nucleus_radius.1) {
                return Err(invalid(format!("class `{}`: bad nucleus radius range", c.name)));
            }
            if !(c.elongation.0 >= 1.0 && c.elongation.0 <= c.elongation.1) {
                return Err(invalid(format!("class `{}`: bad elongation range", c.name)));
            }
            if !(c.nuclear_coverage > 0.0 && c.nuclear_coverage < 1.0) {
                return Err(invalid(format!("class `{}`: nuclear coverage must be in (0, 1)", c.name)));
            }
        }
        Ok(())
    }
}

fn default_classes(n: usize) -> Vec<ClassTexture> {
    let base = [
        ClassTexture {
            name: "sparse_large".into(),
            nucleus_radius: (3.2, 4.4),
            elongation: (1.0, 1.3),
            nuclear_coverage: 0.16,
            regularity: 0.0,
            hue_offset: 0.0,
        },
        ClassTexture {
            name: "dense_small".into(),
            nucleus_radius: (1.1, 1.6),
            elongation: (1.0, 1.3),
            nuclear_coverage: 0.16,
            regularity: 0.8,
            hue_offset: 0.0,
        },
        ClassTexture {
            name: "spindle".into(),
            nucleus_radius: (1.0, 1.5),
            elongation: (3.5, 5.0),
            nuclear_coverage: 0.16,
            regularity: 0.0,
            hue_offset: 0.0,
        },
    ];
    (0..n)
        .map(|i| {
            let mut c = base[i % base.len()].clone();
            if i >= base.len() {
                let scale = 1.0 + 0.35 * (i / base.len()) as f32;
                c.nucleus_radius = (c.nucleus_radius.0 * scale, c.nucleus_radius.1 * scale);
                c.name = format!("{}_{}", c.name, i);
            }
            c
        })
        .collect()
}

/// Per-pixel class annotation at the base level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: u32,
    height: u32,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: u32, height: u32, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != (width as usize) * (height as usize) {
            return Err(invalid("label buffer size does not match dimensions"));
        }
        Ok(Self { width, height, labels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[(y as usize) * (self.width as usize) + x as usize]
    }

    pub fn distinct_labels(&self) -> std::collections::BTreeSet<u8> {
        self.labels.iter().copied().collect()
    }

    /// Pixel counts per label value inside a rectangle; pixels outside the
    /// mask count as background.
    pub fn histogram(&self, x0: u32, y0: u32, w: u32, h: u32) -> [u32; 256] {
        let mut counts = [0u32; 256];
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let l = if x < self.width && y < self.height { self.get(x, y) } else { BACKGROUND_LABEL };
                counts[l as usize] += 1;
            }
        }
        counts
    }

    /// Tissue flag per pixel.
    pub fn tissue(&self) -> super::tissue::BinaryMask {
        super::tissue::BinaryMask::from_fn(self.width, self.height, |x, y| self.get(x, y) != BACKGROUND_LABEL)
    }
}

/// A generated slide and its annotation.
#[derive(Debug, Clone)]
pub struct SyntheticSlide {
    pub slide: InMemorySlide,
    pub labels: LabelMask,
}

struct Ellipse {
    cx: f32,
    cy: f32,
    a: f32,
    b: f32,
    cos: f32,
    sin: f32,
}

impl Ellipse {
    #[inline]
    fn dist2(&self, x: f32, y: f32) -> f32 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }
}

struct RegionStain {
    stroma: [f32; 3],
    nucleus: [f32; 3],
}

const STROMA_RGB: [f32; 3] = [232.0, 168.0, 204.0];
const NUCLEUS_RGB: [f32; 3] = [84.0, 46.0, 128.0];

fn perturb_colour(rgb: [f32; 3], hue: f32, sat: f32, val: f32) -> [f32; 3] {
    let (h, s, v) = rgb_to_hsv(rgb[0] / 255.0, rgb[1] / 255.0, rgb[2] / 255.0);
    let (r, g, b) = hsv_to_rgb((h + hue).rem_euclid(1.0), (s * sat).clamp(0.0, 1.0), (v * val).clamp(0.0, 1.0));
    [r * 255.0, g * 255.0, b * 255.0]
}

fn gaussian(rng: &mut ChaCha8Rng) -> f32 {
    let n: f32 = rng.sample(rand_distr::StandardNormal);
    n
}

/// Generates a slide deterministically from `(spec, seed)`.
pub fn generate_synthetic_slide(spec: &SyntheticSlideSpec, slide_id: &str, seed: u64) -> Result<SyntheticSlide> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let (wf, hf) = (w as f32, h as f32);

    // Tissue: union of ellipses around the centre.
    let n_blobs = 5;
    let target_area = spec.tissue_fraction * wf * hf;
    let blob_area = target_area / n_blobs as f32 * 1.6;
    let blobs: Vec<Ellipse> = (0..n_blobs)
        .map(|_| {
            let aspect: f32 = rng.random_range(0.6..1.6);
            let a = (blob_area / std::f32::consts::PI * aspect).sqrt();
            let b = blob_area / std::f32::consts::PI / a;
            let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
            Ellipse {
                cx: rng.random_range(0.3..0.7) * wf,
                cy: rng.random_range(0.3..0.7) * hf,
                a,
                b,
                cos: theta.cos(),
                sin: theta.sin(),
            }
        })
        .collect();
    let is_tissue = |x: f32, y: f32| blobs.iter().any(|e| e.dist2(x, y) <= 1.0);

    // Voronoi seeds placed inside tissue.
    let mut seeds: Vec<(f32, f32)> = Vec::with_capacity(spec.regions);
    let mut attempts = 0;
    while seeds.len() < spec.regions {
        attempts += 1;
        let (x, y) = (rng.random_range(0.0..wf), rng.random_range(0.0..hf));
        if is_tissue(x, y) || attempts > 100_000 {
            seeds.push((x, y));
        }
    }
    let n_classes = spec.n_classes();
    let mut region_class: Vec<u8> = (0..spec.regions).map(|i| (i % n_classes) as u8).collect();
    rand::seq::SliceRandom::shuffle(region_class.as_mut_slice(), &mut rng);
    let stains: Vec<RegionStain> = region_class
        .iter()
        .map(|&c| {
            let amp = spec.stain_variation;
            let hue = rng.random_range(-0.06..=0.06) * amp + spec.classes[c as usize].hue_offset;
            let sat = 1.0 + rng.random_range(-0.5..=0.5) * amp;
            let val = 1.0 + rng.random_range(-0.25..=0.1) * amp;
            let nuc_val = 1.0 + rng.random_range(-0.3..=0.3) * amp;
            RegionStain {
                stroma: perturb_colour(STROMA_RGB, hue, sat, val),
                nucleus: perturb_colour(NUCLEUS_RGB, hue, sat, val * nuc_val),
            }
        })
        .collect();

    let mut labels = vec![BACKGROUND_LABEL; (w as usize) * (h as usize)];
    let mut region_of = vec![u16::MAX; (w as usize) * (h as usize)];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            if !is_tissue(px, py) {
                continue;
            }
            let mut best = 0;
            let mut best_d = f32::INFINITY;
            for (i, &(sx, sy)) in seeds.iter().enumerate() {
                let d = (sx - px).powi(2) + (sy - py).powi(2);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            let idx = (y as usize) * (w as usize) + x as usize;
            labels[idx] = region_class[best];
            region_of[idx] = best as u16;
        }
    }
    for c in 0..n_classes as u8 {
        if !labels.contains(&c) {
            return Err(invalid(format!(
                "class `{}` received zero area; increase regions or tissue_fraction",
                spec.classes[c as usize].name
            )));
        }
    }

    // Stroma with low-frequency fibre texture and pixel noise.
    let mut canvas = vec![[0.0f32; 3]; (w as usize) * (h as usize)];
    let fibre_phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    for y in 0..h {
        for x in 0..w {
            let idx = (y as usize) * (w as usize) + x as usize;
            let n = gaussian(&mut rng) * spec.pixel_noise;
            canvas[idx] = if region_of[idx] == u16::MAX {
                let v = 246.0 + n * 0.5;
                [v, v, v]
            } else {
                let s = &stains[region_of[idx] as usize];
                let fibre = 6.0 * ((x as f32 * 0.21 + y as f32 * 0.13 + fibre_phase).sin() * (y as f32 * 0.17).cos());
                [s.stroma[0] + n + fibre, s.stroma[1] + n + fibre, s.stroma[2] + n + fibre]
            };
        }
    }

    // Nuclei, class by class, clipped to their own class.
    for (c, tex) in spec.classes.iter().enumerate() {
        let mean_r = 0.5 * (tex.nucleus_radius.0 + tex.nucleus_radius.1);
        let mean_e = 0.5 * (tex.elongation.0 + tex.elongation.1);
        let nucleus_area = std::f32::consts::PI * mean_r * mean_r * mean_e;
        let spacing = (nucleus_area / tex.nuclear_coverage).sqrt();
        let cols = (wf / spacing).ceil() as u32 + 1;
        let rows = (hf / spacing).ceil() as u32 + 1;
        let n_random = ((cols * rows) as f32 * (1.0 - tex.regularity)).round() as u32;
        let mut centres: Vec<(f32, f32)> = Vec::new();
        for gy in 0..rows {
            for gx in 0..cols {
                if rng.random::<f32>() < tex.regularity {
                    let jitter = spacing * 0.25;
                    centres.push((
                        gx as f32 * spacing + rng.random_range(-jitter..=jitter),
                        gy as f32 * spacing + rng.random_range(-jitter..=jitter),
                    ));
                }
            }
        }
        for _ in 0..n_random {
            centres.push((rng.random_range(0.0..wf), rng.random_range(0.0..hf)));
        }
        for (cx, cy) in centres {
            let (ix, iy) = (cx as i64, cy as i64);
            if ix < 0 || iy < 0 || ix >= w as i64 || iy >= h as i64 {
                continue;
            }
            if labels[(iy as usize) * (w as usize) + ix as usize] != c as u8 {
                continue;
            }
            let b = rng.random_range(tex.nucleus_radius.0..=tex.nucleus_radius.1);
            let a = b * rng.random_range(tex.elongation.0..=tex.elongation.1);
            let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
            let shade: f32 = rng.random_range(0.85..1.15);
            let e = Ellipse { cx, cy, a, b, cos: theta.cos(), sin: theta.sin() };
            let reach = a.ceil() as i64 + 1;
            for py in (iy - reach).max(0)..=(iy + reach).min(h as i64 - 1) {
                for px in (ix - reach).max(0)..=(ix + reach).min(w as i64 - 1) {
                    let idx = (py as usize) * (w as usize) + px as usize;
                    if labels[idx] != c as u8 {
                        continue;
                    }
                    let d = e.dist2(px as f32 + 0.5, py as f32 + 0.5);
                    if d > 1.0 {
                        continue;
                    }
                    let region = &stains[region_of[idx] as usize];
                    // Soft rim: blend towards the nucleus colour.
                    let alpha = if d > 0.7 { (1.0 - d) / 0.3 } else { 1.0 };
                    for ch in 0..3 {
                        let target = region.nucleus[ch] * shade;
                        canvas[idx][ch] = canvas[idx][ch] * (1.0 - alpha) + target * alpha;
                    }
                }
            }
        }
    }

    let base = RgbImage::from_fn(w, h, |x, y| {
        let v = canvas[(y as usize) * (w as usize) + x as usize];
        Rgb([to_u8(v[0]), to_u8(v[1]), to_u8(v[2])])
    });
    let low = downsample_box(&base, spec.low_mag_factor);
    let low_mpp = spec.mpp * spec.low_mag_factor as f64;
    let mut levels = vec![(spec.mpp, base)];
    if spec.low_mag_factor > 1 {
        levels.push((low_mpp, low));
    }
    Ok(SyntheticSlide { slide: InMemorySlide::new(slide_id, levels)?, labels: LabelMask::new(w, h, labels)? })
}

/// Box-filter downsampling by an integer factor.
pub fn downsample_box(img: &RgbImage, factor: u32) -> RgbImage {
    if factor <= 1 {
        return img.clone();
    }
    let (w, h) = (img.width() / factor, img.height() / factor);
    RgbImage::from_fn(w.max(1), h.max(1), |x, y| {
        let mut acc = [0u32; 3];
        let mut n = 0;
        for dy in 0..factor {
            for dx in 0..factor {
                let (sx, sy) = (x * factor + dx, y * factor + dy);
                if sx < img.width() && sy < img.height() {
                    let p = img.get_pixel(sx, sy);
                    for c in 0..3 {
                        acc[c] += p[c] as u32;
                    }
                    n += 1;
                }
            }
        }
        Rgb(acc.map(|v| ((v as f32) / n as f32).round() as u8))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::slide::SlideSource;
    use crate::data::tissue::compute_tissue_mask;
    use crate::imaging::luma;

    fn small_spec() -> SyntheticSlideSpec {
        SyntheticSlideSpec::three_class(256, 256)
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = generate_synthetic_slide(&small_spec(), "a", 7).unwrap();
        let b = generate_synthetic_slide(&small_spec(), "a", 7).unwrap();
        assert_eq!(a.slide.level_image(0), b.slide.level_image(0));
        assert_eq!(a.labels, b.labels);
        let c = generate_synthetic_slide(&small_spec(), "a", 8).unwrap();
        assert_ne!(a.slide.level_image(0), c.slide.level_image(0));
    }

    #[test]
    fn three_class_labels_plus_background() {
        let s = generate_synthetic_slide(&small_spec(), "a", 1).unwrap();
        let labels: Vec<u8> = s.labels.distinct_labels().into_iter().collect();
        assert_eq!(labels, vec![0, 1, 2, BACKGROUND_LABEL]);
    }

    #[test]
    fn rejects_zero_area_class_request() {
        let mut spec = small_spec();
        spec.regions = 2;
        assert!(generate_synthetic_slide(&spec, "a", 1).is_err());
        spec.regions = 12;
        spec.classes.truncate(1);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn otsu_recovers_tissue() {
        let s = generate_synthetic_slide(&SyntheticSlideSpec::three_class(512, 512), "a", 3).unwrap();
        let base = s.slide.level_image(0).unwrap();
        let (mut bg_sum, mut bg_n, mut t_sum, mut t_n) = (0.0, 0.0, 0.0, 0.0);
        for (x, y, p) in base.enumerate_pixels() {
            if s.labels.get(x, y) == BACKGROUND_LABEL {
                bg_sum += luma(p) as f64;
                bg_n += 1.0;
            } else {
                t_sum += luma(p) as f64;
                t_n += 1.0;
            }
        }
        assert!(bg_sum / bg_n > 230.0, "background mean {}", bg_sum / bg_n);
        assert!(t_sum / t_n < 200.0, "tissue mean {}", t_sum / t_n);

        let low = s.slide.level_image(1).unwrap();
        let mask = compute_tissue_mask(low);
        let scale = s.slide.levels()[1].mpp / s.slide.levels()[0].mpp;
        let (mut hit, mut total) = (0usize, 0usize);
        for y in 0..s.labels.height() {
            for x in 0..s.labels.width() {
                if s.labels.get(x, y) != BACKGROUND_LABEL {
                    total += 1;
                    let (mx, my) = ((x as f64 / scale) as u32, (y as f64 / scale) as u32);
                    if mx < mask.width() && my < mask.height() && mask.get(mx, my) {
                        hit += 1;
                    }
                }
            }
        }
        assert!(hit as f64 / total as f64 >= 0.95, "recovered {}", hit as f64 / total as f64);
    }
}
