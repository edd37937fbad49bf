//! Grid sampling of patches from slides.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetKind, PatchSet};
use super::patch::{Patch, Split};
use super::slide::SlideSource;
use super::synthetic::{LabelMask, BACKGROUND_LABEL};
use super::tissue::{compute_tissue_mask, BinaryMask};
use crate::error::invalid;
use crate::rng::{rng_for, rng_for_str};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub patch_size: u32,
    /// Sampling resolution in microns per pixel.
    pub mpp: f64,
    /// Minimum tissue coverage of a cell for it to become a candidate.
    pub min_tissue_fraction: f64,
    /// Overlap between neighbouring cells as a fraction of the patch size.
    /// Only supervised sampling honours this; unsupervised grids never overlap.
    pub overlap_fraction: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { patch_size: 256, mpp: 0.5, min_tissue_fraction: 0.5, overlap_fraction: 0.0 }
    }
}

impl GridConfig {
    pub fn stride(&self) -> u32 {
        ((self.patch_size as f64) * (1.0 - self.overlap_fraction)).round().max(1.0) as u32
    }

    fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !(self.mpp > 0.0) {
            return Err(invalid("patch_size and mpp must be positive"));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(invalid("overlap_fraction must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.min_tissue_fraction) {
            return Err(invalid("min_tissue_fraction must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Top-left corners of an axis-aligned grid whose cells fit inside the extent.
pub fn grid_cells(width: u32, height: u32, patch: u32, stride: u32) -> Vec<(u32, u32)> {
    let mut cells = Vec::new();
    if patch == 0 || stride == 0 || width < patch || height < patch {
        return cells;
    }
    let mut y = 0;
    while y + patch <= height {
        let mut x = 0;
        while x + patch <= width {
            cells.push((x, y));
            x += stride;
        }
        y += stride;
    }
    cells
}

/// Samples non-overlapping tissue patches from one slide.
///
/// `mask` is a tissue mask computed at resolution `mask_mpp`. Cells of the
/// grid at `grid.mpp` with tissue coverage of at least
/// `grid.min_tissue_fraction` are candidates; if there are more than
/// `max_per_slide`, a uniform random subset of exactly that size is kept.
/// Returns an empty list when no cell qualifies.
pub fn sample_unsupervised_patches(
    slide: &dyn SlideSource,
    mask: &BinaryMask,
    mask_mpp: f64,
    grid: &GridConfig,
    max_per_slide: usize,
    seed: u64,
) -> Result<Vec<Patch>> {
    grid.validate()?;
    if max_per_slide == 0 {
        return Err(invalid("max_per_slide must be at least 1"));
    }
    let (w, h) = slide.dimensions_at(grid.mpp);
    let scale = mask_mpp / grid.mpp;
    let size = grid.patch_size;
    let candidates: Vec<(u32, u32)> = grid_cells(w, h, size, size)
        .into_iter()
        .filter(|&(x, y)| mask.coverage(x as f64, y as f64, size as f64, size as f64, scale) >= grid.min_tissue_fraction)
        .collect();
    if candidates.is_empty() {
        log::warn!("slide {}: no tissue candidates", slide.slide_id());
        return Ok(Vec::new());
    }
    let chosen: Vec<(u32, u32)> = if candidates.len() > max_per_slide {
        let mut rng = rng_for_str(seed, slide.slide_id());
        let mut idx = index::sample(&mut rng, candidates.len(), max_per_slide).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| candidates[i]).collect()
    } else {
        candidates
    };
    chosen
        .into_iter()
        .map(|(x, y)| {
            Ok(Patch {
                patch_id: Patch::make_id(slide.slide_id(), x, y),
                slide_id: slide.slide_id().to_string(),
                x,
                y,
                mpp: grid.mpp,
                pixels: slide.read_region(grid.mpp, x, y, size, size)?,
                label: None,
                split: Split::Train,
                fold: None,
            })
        })
        .collect()
}

/// Computes the tissue mask on the coarsest level and samples from it.
pub fn sample_slide(slide: &dyn SlideSource, grid: &GridConfig, max_per_slide: usize, seed: u64) -> Result<Vec<Patch>> {
    let coarsest = *slide.levels().last().expect("slide has levels");
    let low = slide.read_region(coarsest.mpp, 0, 0, coarsest.width, coarsest.height)?;
    let mask = compute_tissue_mask(&low);
    sample_unsupervised_patches(slide, &mask, coarsest.mpp, grid, max_per_slide, seed)
}

/// Unsupervised dataset over many slides.
pub fn build_unsupervised_dataset(
    slides: &[&dyn SlideSource],
    grid: &GridConfig,
    max_per_slide: usize,
    seed: u64,
) -> Result<PatchSet> {
    let mut patches = Vec::new();
    for s in slides {
        patches.extend(sample_slide(*s, grid, max_per_slide, seed)?);
    }
    Ok(PatchSet { kind: DatasetKind::Unsupervised, class_names: None, patches })
}

/// A slide with pixel annotations and its split assignment.
pub struct LabeledSlide<'a> {
    pub slide: &'a dyn SlideSource,
    pub labels: &'a LabelMask,
    /// Resolution at which `labels` is defined.
    pub labels_mpp: f64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedConfig {
    pub grid: GridConfig,
    /// Training patches per class: `min(cap, available)`.
    pub train_per_class_cap: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// The majority class must cover at least this fraction of a patch.
    pub min_class_fraction: f64,
}

impl SupervisedConfig {
    /// Five-class skin-style targets: training capped at 75 000 per class,
    /// 700 validation and 3 700 test patches per class, 50% grid overlap.
    pub fn skin_style() -> Self {
        Self {
            grid: GridConfig { overlap_fraction: 0.5, ..GridConfig::default() },
            train_per_class_cap: 75_000,
            val_per_class: 700,
            test_per_class: 3_700,
            min_class_fraction: 0.5,
        }
    }

    pub fn target(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_class_cap,
            Split::Val => self.val_per_class,
            Split::Test => self.test_per_class,
        }
    }
}

/// Majority class of a rectangle of the label mask, if it covers at least
/// `min_fraction` of the rectangle. Background never wins.
pub fn majority_label(labels: &LabelMask, x: u32, y: u32, w: u32, h: u32, min_fraction: f64) -> Option<usize> {
    let counts = labels.histogram(x, y, w, h);
    let (best, n) = counts
        .iter()
        .enumerate()
        .filter(|(l, _)| *l != BACKGROUND_LABEL as usize)
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
    let total = (w as f64) * (h as f64);
    if *n > 0 && *n as f64 / total >= min_fraction {
        Some(best)
    } else {
        None
    }
}

/// Supervised, class-balanced dataset from annotated slides.
///
/// Per class, the training split keeps `min(cap, available)` patches; val and
/// test keep exactly their per-class targets when enough are available and
/// all available otherwise (logged). A class with no candidates in a split
/// that asks for it is an error.
pub fn build_supervised_dataset(
    slides: &[LabeledSlide<'_>],
    class_names: &[String],
    config: &SupervisedConfig,
    seed: u64,
) -> Result<PatchSet> {
    let grid = &config.grid;
    grid.validate()?;
    let n_classes = class_names.len();
    if n_classes < 2 {
        return Err(invalid("supervised datasets need at least two classes"));
    }
    let mut split_of_slide: BTreeMap<&str, Split> = BTreeMap::new();
    for s in slides {
        if let Some(prev) = split_of_slide.insert(s.slide.slide_id(), s.split) {
            if prev != s.split {
                return Err(invalid(format!(
                    "slide `{}` assigned to both {prev} and {}",
                    s.slide.slide_id(),
                    s.split
                )));
            }
        }
    }

    // candidates[(split, class)] = (slide index, x, y)
    let mut candidates: BTreeMap<(Split, usize), Vec<(usize, u32, u32)>> = BTreeMap::new();
    let size = grid.patch_size;
    for (si, s) in slides.iter().enumerate() {
        let (w, h) = s.slide.dimensions_at(grid.mpp);
        let f = grid.mpp / s.labels_mpp;
        let lsize = ((size as f64) * f).round().max(1.0) as u32;
        for (x, y) in grid_cells(w, h, size, grid.stride()) {
            let lx = ((x as f64) * f).round() as u32;
            let ly = ((y as f64) * f).round() as u32;
            if let Some(c) = majority_label(s.labels, lx, ly, lsize, lsize, config.min_class_fraction) {
                if c >= n_classes {
                    return Err(invalid(format!("label {c} on slide `{}` exceeds class list", s.slide.slide_id())));
                }
                candidates.entry((s.split, c)).or_default().push((si, x, y));
            }
        }
    }

    let present_splits: std::collections::BTreeSet<Split> = slides.iter().map(|s| s.split).collect();
    let mut patches = Vec::new();
    for split in Split::ALL {
        if !present_splits.contains(&split) {
            continue;
        }
        let target = config.target(split);
        if target == 0 {
            continue;
        }
        for (c, name) in class_names.iter().enumerate() {
            let pool = candidates.get(&(split, c)).map(Vec::as_slice).unwrap_or(&[]);
            if pool.is_empty() {
                return Err(Error::MissingClass { class: name.clone(), split: split.to_string() });
            }
            let take = target.min(pool.len());
            if split != Split::Train && take < target {
                log::warn!("{split}/{name}: only {} of {target} patches available", pool.len());
            }
            let mut rng = rng_for(seed, (split as u64) << 32 | c as u64);
            let mut idx = index::sample(&mut rng, pool.len(), take).into_vec();
            idx.sort_unstable();
            for i in idx {
                let (si, x, y) = pool[i];
                let s = &slides[si];
                patches.push(Patch {
                    patch_id: Patch::make_id(s.slide.slide_id(), x, y),
                    slide_id: s.slide.slide_id().to_string(),
                    x,
                    y,
                    mpp: grid.mpp,
                    pixels: s.slide.read_region(grid.mpp, x, y, size, size)?,
                    label: Some(c),
                    split,
                    fold: None,
                });
            }
        }
    }
    Ok(PatchSet { kind: DatasetKind::Supervised, class_names: Some(class_names.to_vec()), patches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::slide::InMemorySlide;
    use image::{Rgb, RgbImage};
    use std::collections::HashSet;

    fn tissue_slide(size: u32) -> InMemorySlide {
        InMemorySlide::new("s", vec![(0.5, RgbImage::from_pixel(size, size, Rgb([120, 60, 140])))]).unwrap()
    }

    fn grid(patch: u32) -> GridConfig {
        GridConfig { patch_size: patch, ..GridConfig::default() }
    }

    #[test]
    fn background_mask_yields_nothing() {
        let s = tissue_slide(512);
        let mask = BinaryMask::new(64, 64);
        let p = sample_unsupervised_patches(&s, &mask, 4.0, &grid(256), 1000, 0).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn full_tissue_512_gives_four_corners() {
        let s = tissue_slide(512);
        let mask = BinaryMask::filled(64, 64, true);
        let p = sample_unsupervised_patches(&s, &mask, 4.0, &grid(256), 1000, 0).unwrap();
        let mut corners: Vec<_> = p.iter().map(|p| (p.x, p.y)).collect();
        corners.sort();
        assert_eq!(corners, vec![(0, 0), (0, 256), (256, 0), (256, 256)]);
        assert!(p.iter().all(|p| p.pixels.dimensions() == (256, 256)));
    }

    #[test]
    fn cap_takes_exact_subset_of_grid() {
        let s = tissue_slide(2560);
        let mask = BinaryMask::filled(320, 320, true);
        let p = sample_unsupervised_patches(&s, &mask, 4.0, &grid(256), 50, 9).unwrap();
        assert_eq!(p.len(), 50);
        let all: HashSet<(u32, u32)> = grid_cells(2560, 2560, 256, 256).into_iter().collect();
        assert_eq!(all.len(), 100);
        let chosen: HashSet<(u32, u32)> = p.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(chosen.len(), 50);
        assert!(chosen.is_subset(&all));
        let again = sample_unsupervised_patches(&s, &mask, 4.0, &grid(256), 50, 9).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn coverage_threshold_is_respected() {
        let s = tissue_slide(512);
        // Left quarter of the slide is tissue: cells at x=0 are fully covered,
        // cells at x=256 are not.
        let mask = BinaryMask::from_fn(64, 64, |x, _| x < 16);
        let p = sample_unsupervised_patches(&s, &mask, 4.0, &grid(128), 100, 0).unwrap();
        assert!(p.iter().all(|p| p.x == 0));
        assert_eq!(p.len(), 4);
    }

    #[test]
    fn majority_requires_half_coverage() {
        let labels = LabelMask::new(4, 1, vec![0, 0, 1, BACKGROUND_LABEL]).unwrap();
        assert_eq!(majority_label(&labels, 0, 0, 4, 1, 0.5), Some(0));
        let labels = LabelMask::new(4, 1, vec![0, 1, 2, BACKGROUND_LABEL]).unwrap();
        assert_eq!(majority_label(&labels, 0, 0, 4, 1, 0.5), None);
    }

    #[test]
    fn split_reuse_of_a_slide_is_rejected() {
        let s = tissue_slide(64);
        let labels = LabelMask::new(64, 64, vec![0; 64 * 64]).unwrap();
        let slides = [
            LabeledSlide { slide: &s, labels: &labels, labels_mpp: 0.5, split: Split::Train },
            LabeledSlide { slide: &s, labels: &labels, labels_mpp: 0.5, split: Split::Test },
        ];
        let cfg = SupervisedConfig { grid: grid(16), ..SupervisedConfig::skin_style() };
        assert!(build_supervised_dataset(&slides, &["a".into(), "b".into()], &cfg, 0).is_err());
    }

    #[test]
    fn missing_class_names_the_class() {
        let s = tissue_slide(64);
        let labels = LabelMask::new(64, 64, vec![0; 64 * 64]).unwrap();
        let slides = [LabeledSlide { slide: &s, labels: &labels, labels_mpp: 0.5, split: Split::Train }];
        let cfg = SupervisedConfig { grid: grid(16), ..SupervisedConfig::skin_style() };
        let err = build_supervised_dataset(&slides, &["tumor".into(), "stroma".into()], &cfg, 0).unwrap_err();
        assert!(err.to_string().contains("stroma"), "{err}");
    }
}
