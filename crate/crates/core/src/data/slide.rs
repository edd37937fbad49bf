//! Multi-resolution slide sources.
//!
//! Real slides are ingested from a directory holding one lossless image per
//! pyramid level and a `slide.json` sidecar with the resolution of each level.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::imaging::sample_bilinear;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlideLevel {
    /// Microns per pixel.
    pub mpp: f64,
    pub width: u32,
    pub height: u32,
}

/// A slide that can be read at any resolution.
pub trait SlideSource {
    fn slide_id(&self) -> &str;

    /// Levels ordered from finest to coarsest.
    fn levels(&self) -> &[SlideLevel];

    /// Reads a `w × h` RGB region whose top-left corner is `(x, y)` in pixel
    /// coordinates at resolution `mpp`. Pixels outside the slide are white.
    fn read_region(&self, mpp: f64, x: u32, y: u32, w: u32, h: u32) -> Result<RgbImage>;

    /// Slide extent in pixels at resolution `mpp`.
    fn dimensions_at(&self, mpp: f64) -> (u32, u32) {
        let base = self.levels()[0];
        let f = base.mpp / mpp;
        ((base.width as f64 * f).floor() as u32, (base.height as f64 * f).floor() as u32)
    }
}

/// Slide fully held in memory.
#[derive(Debug, Clone)]
pub struct InMemorySlide {
    id: String,
    levels: Vec<SlideLevel>,
    images: Vec<RgbImage>,
}

const MPP_TOL: f64 = 1e-6;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);

impl InMemorySlide {
    pub fn new(id: impl Into<String>, levels: Vec<(f64, RgbImage)>) -> Result<Self> {
        if levels.is_empty() {
            return Err(invalid("a slide needs at least one level"));
        }
        let mut meta = Vec::with_capacity(levels.len());
        let mut images = Vec::with_capacity(levels.len());
        for (mpp, img) in levels {
            if !(mpp > 0.0) {
                return Err(invalid(format!("level mpp must be positive, got {mpp}")));
            }
            if let Some(prev) = meta.last() {
                let prev: &SlideLevel = prev;
                if mpp <= prev.mpp {
                    return Err(invalid("level mpp values must strictly increase"));
                }
            }
            meta.push(SlideLevel { mpp, width: img.width(), height: img.height() });
            images.push(img);
        }
        Ok(Self { id: id.into(), levels: meta, images })
    }

    pub fn level_image(&self, index: usize) -> Option<&RgbImage> {
        self.images.get(index)
    }

    /// Coarsest level whose resolution is at least as fine as `mpp`.
    fn source_level(&self, mpp: f64) -> usize {
        self.levels.iter().rposition(|l| l.mpp <= mpp + MPP_TOL).unwrap_or(0)
    }

    /// Reads the level image at the given index, which must match `mpp` exactly.
    pub fn image_at(&self, mpp: f64) -> Option<&RgbImage> {
        self.levels
            .iter()
            .position(|l| (l.mpp - mpp).abs() < MPP_TOL)
            .map(|i| &self.images[i])
    }
}

impl SlideSource for InMemorySlide {
    fn slide_id(&self) -> &str {
        &self.id
    }

    fn levels(&self) -> &[SlideLevel] {
        &self.levels
    }

    fn read_region(&self, mpp: f64, x: u32, y: u32, w: u32, h: u32) -> Result<RgbImage> {
        if !(mpp > 0.0) || w == 0 || h == 0 {
            return Err(invalid(format!("bad region request mpp={mpp} {w}x{h}")));
        }
        let idx = self.source_level(mpp);
        let level = self.levels[idx];
        let src = &self.images[idx];
        let mut out = RgbImage::from_pixel(w, h, BACKGROUND);
        if (level.mpp - mpp).abs() < MPP_TOL {
            for oy in 0..h {
                let sy = y + oy;
                if sy >= level.height {
                    break;
                }
                for ox in 0..w {
                    let sx = x + ox;
                    if sx >= level.width {
                        break;
                    }
                    out.put_pixel(ox, oy, *src.get_pixel(sx, sy));
                }
            }
            return Ok(out);
        }
        // Resample from the nearest finer level.
        let f = mpp / level.mpp;
        let (tw, th) = self.dimensions_at(mpp);
        for oy in 0..h {
            let ty = y + oy;
            if ty >= th {
                break;
            }
            let sy = (ty as f64 + 0.5) * f - 0.5;
            for ox in 0..w {
                let tx = x + ox;
                if tx >= tw {
                    break;
                }
                let sx = (tx as f64 + 0.5) * f - 0.5;
                let v = sample_bilinear(src, sx as f32, sy as f32);
                out.put_pixel(ox, oy, Rgb(v.map(crate::imaging::to_u8)));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SidecarLevel {
    mpp: f64,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    slide_id: String,
    levels: Vec<SidecarLevel>,
}

pub const SIDECAR_NAME: &str = "slide.json";

/// Loads a slide directory: `slide.json` plus one PNG per level.
pub fn open_slide_dir(dir: &Path) -> Result<InMemorySlide> {
    let sidecar_path = dir.join(SIDECAR_NAME);
    if !sidecar_path.exists() {
        return Err(Error::MissingFile(sidecar_path));
    }
    let sidecar: Sidecar = serde_json::from_reader(std::fs::File::open(&sidecar_path)?)?;
    let mut levels = Vec::new();
    for l in sidecar.levels {
        let path = dir.join(&l.file);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        levels.push((l.mpp, image::open(&path)?.to_rgb8()));
    }
    InMemorySlide::new(sidecar.slide_id, levels)
}

/// Writes a slide in the directory layout read by [`open_slide_dir`].
pub fn write_slide_dir(slide: &InMemorySlide, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut levels = Vec::new();
    for (i, level) in slide.levels.iter().enumerate() {
        let file = format!("level_{i}.png");
        slide.images[i].save(dir.join(&file))?;
        levels.push(SidecarLevel { mpp: level.mpp, file });
    }
    let sidecar = Sidecar { slide_id: slide.id.clone(), levels };
    let path = dir.join(SIDECAR_NAME);
    std::fs::write(&path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([x as u8, y as u8, 0]))
    }

    #[test]
    fn rejects_non_increasing_levels() {
        let r = InMemorySlide::new("s", vec![(0.5, gradient(4, 4)), (0.5, gradient(2, 2))]);
        assert!(r.is_err());
    }

    #[test]
    fn exact_level_read_is_a_crop_with_white_padding() {
        let s = InMemorySlide::new("s", vec![(0.5, gradient(8, 8))]).unwrap();
        let r = s.read_region(0.5, 6, 2, 4, 3).unwrap();
        assert_eq!(r.dimensions(), (4, 3));
        assert_eq!(r.get_pixel(0, 0).0, [6, 2, 0]);
        assert_eq!(r.get_pixel(3, 0).0, [255, 255, 255]);
    }

    #[test]
    fn coarser_read_resamples() {
        let s = InMemorySlide::new("s", vec![(0.5, RgbImage::from_pixel(8, 8, Rgb([9, 9, 9])))]).unwrap();
        assert_eq!(s.dimensions_at(1.0), (4, 4));
        let r = s.read_region(1.0, 0, 0, 4, 4).unwrap();
        assert!(r.pixels().all(|p| p.0 == [9, 9, 9]));
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = InMemorySlide::new("slide-a", vec![(0.5, gradient(8, 8)), (2.0, gradient(2, 2))]).unwrap();
        write_slide_dir(&s, dir.path()).unwrap();
        let back = open_slide_dir(dir.path()).unwrap();
        assert_eq!(back.slide_id(), "slide-a");
        assert_eq!(back.levels(), s.levels());
        assert_eq!(back.level_image(0), s.level_image(0));
    }
}
