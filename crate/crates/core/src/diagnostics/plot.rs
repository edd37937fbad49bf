//! Minimal PNG rendering of histograms and 2-D scatter plots.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::Result;

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

fn frame(width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    for x in 0..width {
        img.put_pixel(x, height - 1, Rgb([0, 0, 0]));
    }
    for y in 0..height {
        img.put_pixel(0, y, Rgb([0, 0, 0]));
    }
    img
}

/// Bar chart of bin counts.
pub fn render_histogram(counts: &[u64], width: u32, height: u32) -> RgbImage {
    let mut img = frame(width, height);
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar = (width - 1) as f64 / counts.len().max(1) as f64;
    for (i, &c) in counts.iter().enumerate() {
        let h = ((c as f64 / max) * (height - 2) as f64).round() as u32;
        let x0 = 1 + (i as f64 * bar) as u32;
        let x1 = (1 + ((i + 1) as f64 * bar) as u32).min(width);
        for x in x0..x1.saturating_sub(1).max(x0 + 1).min(width) {
            for y in (height - 1 - h)..(height - 1) {
                img.put_pixel(x, y, Rgb(PALETTE[0]));
            }
        }
    }
    img
}

/// Points coloured by label, axes scaled to the data range.
pub fn render_scatter(points: &Array2<f64>, labels: &[usize], size: u32) -> RgbImage {
    let mut img = frame(size, size);
    let range = |c: usize| {
        let col = points.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo).max(1e-12))
    };
    let ((x0, xs), (y0, ys)) = (range(0), range(1));
    let inner = (size - 8) as f64;
    for (i, &l) in labels.iter().enumerate() {
        let px = 4.0 + (points[[i, 0]] - x0) / xs * inner;
        let py = 4.0 + (1.0 - (points[[i, 1]] - y0) / ys) * inner;
        for dx in -1i32..=1 {
            for dy in -1i32..=1 {
                let (x, y) = (px as i32 + dx, py as i32 + dy);
                if x > 0 && y >= 0 && (x as u32) < size && (y as u32) < size - 1 {
                    img.put_pixel(x as u32, y as u32, Rgb(PALETTE[l % PALETTE.len()]));
                }
            }
        }
    }
    img
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)?;
    Ok(())
}
