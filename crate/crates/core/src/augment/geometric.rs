//! Pixel-permuting transforms: dihedral flips/rotations and tile shuffling.

use image::{imageops, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::invalid;
use crate::Result;

/// One of the eight symmetries of the square: optional horizontal flip then
/// `quarter_turns` clockwise rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub quarter_turns: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { flip_horizontal: false, flip_vertical: false, quarter_turns: 0 };

    pub fn apply(&self, img: &RgbImage) -> RgbImage {
        let mut out = img.clone();
        if self.flip_horizontal {
            imageops::flip_horizontal_in_place(&mut out);
        }
        if self.flip_vertical {
            imageops::flip_vertical_in_place(&mut out);
        }
        match self.quarter_turns % 4 {
            1 => imageops::rotate90(&out),
            2 => {
                imageops::rotate180_in_place(&mut out);
                out
            }
            3 => imageops::rotate270(&out),
            _ => out,
        }
    }
}

/// Flip and rotation probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipRotParams {
    /// Probability of a horizontal flip; the vertical flip, when enabled, is
    /// drawn independently with the same probability.
    pub flip_probability: f64,
    pub vertical_flip: bool,
    pub rotate_probability: f64,
    /// When triggered, rotate by a uniformly drawn multiple of 90°; otherwise
    /// rotate by exactly 90°.
    pub uniform_quarter_turns: bool,
}

impl Default for FlipRotParams {
    fn default() -> Self {
        Self { flip_probability: 0.5, vertical_flip: true, rotate_probability: 0.5, uniform_quarter_turns: true }
    }
}

pub fn sample_dihedral<R: Rng + ?Sized>(p: &FlipRotParams, rng: &mut R) -> Dihedral {
    let flip_horizontal = rng.random::<f64>() < p.flip_probability;
    let flip_vertical = p.vertical_flip && rng.random::<f64>() < p.flip_probability;
    let quarter_turns = if rng.random::<f64>() < p.rotate_probability {
        if p.uniform_quarter_turns {
            rng.random_range(0..4)
        } else {
            1
        }
    } else {
        0
    };
    Dihedral { flip_horizontal, flip_vertical, quarter_turns }
}

pub fn flip_rot90<R: Rng + ?Sized>(img: &RgbImage, p: &FlipRotParams, rng: &mut R) -> RgbImage {
    sample_dihedral(p, rng).apply(img)
}

/// Rearranges the `rows × cols` tiles of `img` so that output tile `i`
/// (row-major) holds input tile `perm[i]`. When the image size is not a
/// multiple of the grid, tiles cover the largest divisible top-left region and
/// the remaining right/bottom strip stays in place.
pub fn shuffle_tiles(img: &RgbImage, rows: u32, cols: u32, perm: &[usize]) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    if rows == 0 || cols == 0 || rows > h || cols > w {
        return Err(invalid(format!("grid {rows}x{cols} does not fit a {w}x{h} image")));
    }
    let n = (rows * cols) as usize;
    if perm.len() != n {
        return Err(invalid("permutation length must equal the number of tiles"));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(invalid("not a permutation"));
        }
    }
    let (tw, th) = (w / cols, h / rows);
    let mut out = img.clone();
    for (dst, &src) in perm.iter().enumerate() {
        if dst == src {
            continue;
        }
        let (dr, dc) = ((dst as u32) / cols, (dst as u32) % cols);
        let (sr, sc) = ((src as u32) / cols, (src as u32) % cols);
        for y in 0..th {
            for x in 0..tw {
                out.put_pixel(dc * tw + x, dr * th + y, *img.get_pixel(sc * tw + x, sr * th + y));
            }
        }
    }
    Ok(out)
}

pub fn grid_shuffle<R: Rng + ?Sized>(img: &RgbImage, rows: u32, cols: u32, rng: &mut R) -> Result<RgbImage> {
    let mut perm: Vec<usize> = (0..(rows * cols) as usize).collect();
    perm.shuffle(rng);
    shuffle_tiles(img, rows, cols, &perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{sorted_pixels, sorted_values};
    use image::Rgb;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textured(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 31 + y) as u8, (y * 17 + 3 * x) as u8, (x * y) as u8]))
    }

    #[test]
    fn zero_probability_is_identity() {
        let img = textured(9, 7);
        let p = FlipRotParams { flip_probability: 0.0, rotate_probability: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            assert_eq!(flip_rot90(&img, &p, &mut rng), img);
        }
    }

    #[test]
    fn double_horizontal_flip_is_identity() {
        let img = textured(9, 7);
        let f = Dihedral { flip_horizontal: true, ..Dihedral::IDENTITY };
        assert_eq!(f.apply(&f.apply(&img)), img);
    }

    #[test]
    fn flips_rotations_preserve_multiset() {
        let img = textured(12, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let before = sorted_pixels(&img);
        for _ in 0..200 {
            assert_eq!(sorted_pixels(&flip_rot90(&img, &FlipRotParams::default(), &mut rng)), before);
        }
    }

    #[test]
    fn reversed_tile_order_moves_corner_tile() {
        let img = textured(6, 6);
        let perm: Vec<usize> = (0..9).rev().collect();
        let out = shuffle_tiles(&img, 3, 3, &perm).unwrap();
        // Tiles are 2x2. Brute-force map each output pixel back to its source.
        for y in 0..6u32 {
            for x in 0..6u32 {
                let dst_tile = (y / 2 * 3 + x / 2) as usize;
                let src_tile = perm[dst_tile] as u32;
                let (sx, sy) = ((src_tile % 3) * 2 + x % 2, (src_tile / 3) * 2 + y % 2);
                assert_eq!(out.get_pixel(x, y), img.get_pixel(sx, sy));
            }
        }
        assert_eq!(out.get_pixel(4, 4), img.get_pixel(0, 0));
        assert_eq!(out.get_pixel(5, 5), img.get_pixel(1, 1));
    }

    #[test]
    fn identity_permutation_and_multiset() {
        let img = textured(10, 8);
        let id: Vec<usize> = (0..9).collect();
        assert_eq!(shuffle_tiles(&img, 3, 3, &id).unwrap(), img);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let out = grid_shuffle(&img, 3, 3, &mut rng).unwrap();
            assert_eq!(sorted_values(&out), sorted_values(&img));
        }
    }

    #[test]
    fn oversized_grid_rejected() {
        let img = textured(2, 2);
        assert!(grid_shuffle(&img, 3, 3, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
