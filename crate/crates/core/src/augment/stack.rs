//! Named augmentation stacks and positive-pair generation.

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::blur::gaussian_blur;
use super::color::{color_jitter, JitterParams};
use super::crop::{random_resized_crop, CropParams};
use super::distort::{grid_distort, DistortParams};
use super::geometric::{grid_shuffle, Dihedral};
use crate::error::invalid;
use crate::{Error, Result};

/// A transform family together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformKind {
    CropResize(CropParams),
    /// Horizontal flip, plus an independent vertical flip when `vertical`.
    Flip { vertical: bool },
    /// Rotation by a multiple of 90°; uniform over the four turns when
    /// `uniform`, else exactly one quarter turn.
    Rot90 { uniform: bool },
    ColorJitter(JitterParams),
    GaussianBlur { sigma_min: f64, sigma_max: f64 },
    GridDistort(DistortParams),
    GridShuffle { rows: u32, cols: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    #[serde(flatten)]
    pub kind: TransformKind,
    pub probability: f64,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, probability: f64) -> Self {
        Self { kind, probability }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(invalid(format!("transform probability {} outside [0, 1]", self.probability)));
        }
        match &self.kind {
            TransformKind::CropResize(p) => p.validate(),
            TransformKind::ColorJitter(p) => p.validate(),
            TransformKind::GaussianBlur { sigma_min, sigma_max } => {
                if *sigma_min > 0.0 && sigma_max >= sigma_min {
                    Ok(())
                } else {
                    Err(invalid("blur sigma bounds must be positive and ordered"))
                }
            }
            TransformKind::GridDistort(p) => {
                if p.num_steps >= 1 {
                    Ok(())
                } else {
                    Err(invalid("grid distortion needs num_steps >= 1"))
                }
            }
            TransformKind::GridShuffle { rows, cols } => {
                if *rows >= 1 && *cols >= 1 {
                    Ok(())
                } else {
                    Err(invalid("grid shuffle needs a positive grid"))
                }
            }
            TransformKind::Flip { .. } | TransformKind::Rot90 { .. } => Ok(()),
        }
    }

    /// Applies the transform; the probability gate is drawn first.
    pub fn apply<R: Rng + ?Sized>(&self, img: RgbImage, rng: &mut R) -> Result<RgbImage> {
        let p = self.probability;
        match &self.kind {
            // Flip draws its own gate per axis.
            TransformKind::Flip { vertical } => {
                let h = rng.random::<f64>() < p;
                let v = *vertical && rng.random::<f64>() < p;
                Ok(Dihedral { flip_horizontal: h, flip_vertical: v, quarter_turns: 0 }.apply(&img))
            }
            kind => {
                if !(rng.random::<f64>() < p) {
                    return Ok(img);
                }
                match kind {
                    TransformKind::CropResize(c) => Ok(random_resized_crop(&img, c, rng)?.0),
                    TransformKind::Rot90 { uniform } => {
                        let turns = if *uniform { rng.random_range(0..4) } else { 1 };
                        Ok(Dihedral { quarter_turns: turns, ..Dihedral::IDENTITY }.apply(&img))
                    }
                    TransformKind::ColorJitter(j) => color_jitter(&img, j, rng),
                    TransformKind::GaussianBlur { sigma_min, sigma_max } => {
                        Ok(gaussian_blur(&img, *sigma_min, *sigma_max, rng)?.0)
                    }
                    TransformKind::GridDistort(d) => grid_distort(&img, d, rng),
                    TransformKind::GridShuffle { rows, cols } => grid_shuffle(&img, *rows, *cols, rng),
                    TransformKind::Flip { .. } => unreachable!(),
                }
            }
        }
    }
}

/// Ordered list of transforms generating one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationStack {
    pub name: String,
    pub transforms: Vec<TransformSpec>,
}

impl AugmentationStack {
    pub fn validate(&self) -> Result<()> {
        match self.transforms.first() {
            Some(TransformSpec { kind: TransformKind::CropResize(_), probability }) if *probability == 1.0 => {}
            _ => return Err(invalid(format!("stack `{}` must start with a crop_resize of probability 1", self.name))),
        }
        self.transforms.iter().try_for_each(TransformSpec::validate)
    }

    /// Network input size produced by the leading crop.
    pub fn output_size(&self) -> u32 {
        match self.transforms.first().map(|t| &t.kind) {
            Some(TransformKind::CropResize(c)) => c.size,
            _ => 0,
        }
    }

    pub fn crop(&self) -> Option<&CropParams> {
        self.transforms.iter().find_map(|t| match &t.kind {
            TransformKind::CropResize(c) => Some(c),
            _ => None,
        })
    }

    pub fn find(&self, pred: impl Fn(&TransformKind) -> bool) -> Option<&TransformSpec> {
        self.transforms.iter().find(|t| pred(&t.kind))
    }

    /// Same stack with a different output size.
    pub fn with_size(mut self, size: u32) -> Self {
        for t in &mut self.transforms {
            if let TransformKind::CropResize(c) = &mut t.kind {
                c.size = size;
            }
        }
        self
    }

    /// The same stack with every magnitude set to zero: full-image crops,
    /// zero jitter and distortion, and the purely discrete transforms (flips,
    /// rotations, shuffles) and blur switched off. Applied to an image of the
    /// output size it is the identity up to rounding.
    pub fn zero_strength(&self) -> Self {
        let transforms = self
            .transforms
            .iter()
            .map(|t| {
                let mut t = t.clone();
                match &mut t.kind {
                    TransformKind::CropResize(c) => {
                        c.scale_min = 1.0;
                        c.scale_max = 1.0;
                        c.ratio_min = 1.0;
                        c.ratio_max = 1.0;
                    }
                    TransformKind::ColorJitter(j) => *j = JitterParams { brightness: 0.0, contrast: 0.0, saturation: 0.0, hue: 0.0 },
                    TransformKind::GridDistort(d) => d.distort_limit = 0.0,
                    TransformKind::Flip { .. }
                    | TransformKind::Rot90 { .. }
                    | TransformKind::GaussianBlur { .. }
                    | TransformKind::GridShuffle { .. } => t.probability = 0.0,
                }
                t
            })
            .collect();
        Self { name: format!("{}_zero", self.name), transforms }
    }

    pub fn apply<R: Rng + ?Sized>(&self, img: &RgbImage, rng: &mut R) -> Result<RgbImage> {
        let mut out = img.clone();
        for t in &self.transforms {
            out = t.apply(out, rng)?;
        }
        Ok(out)
    }
}

pub const DEFAULT_INPUT_SIZE: u32 = 224;

/// Registry of named stacks: eight view-generation stacks plus the
/// augmentation used for supervised training.
pub const STACK_NAMES: [&str; 9] = [
    "base",
    "base_blur",
    "base_scale",
    "simclr_original",
    "base_scale_distort",
    "base_scale_distort_shuffle",
    "base_shuffle",
    "base_distort_shuffle",
    "supervised",
];

fn crop(scale_min: f64, size: u32) -> TransformSpec {
    let (ratio_min, ratio_max) = if scale_min < 0.95 { (3.0 / 4.0, 4.0 / 3.0) } else { (1.0, 1.0) };
    TransformSpec::new(TransformKind::CropResize(CropParams { scale_min, scale_max: 1.0, ratio_min, ratio_max, size }), 1.0)
}

fn base(scale_min: f64, size: u32) -> Vec<TransformSpec> {
    vec![
        crop(scale_min, size),
        TransformSpec::new(TransformKind::Flip { vertical: true }, 0.5),
        TransformSpec::new(TransformKind::Rot90 { uniform: true }, 0.5),
        TransformSpec::new(TransformKind::ColorJitter(JitterParams::default()), 0.8),
    ]
}

fn blur() -> TransformSpec {
    TransformSpec::new(TransformKind::GaussianBlur { sigma_min: 0.1, sigma_max: 2.0 }, 0.5)
}

fn distort() -> TransformSpec {
    TransformSpec::new(TransformKind::GridDistort(DistortParams::default()), 0.5)
}

fn shuffle() -> TransformSpec {
    TransformSpec::new(TransformKind::GridShuffle { rows: 3, cols: 3 }, 0.5)
}

const BASE_SCALE: f64 = 0.95;
const STRONG_SCALE: f64 = 0.2;

/// Looks up a registered stack at the default 224-pixel input size.
pub fn compose_stack(name: &str) -> Result<AugmentationStack> {
    compose_stack_sized(name, DEFAULT_INPUT_SIZE)
}

pub fn compose_stack_sized(name: &str, size: u32) -> Result<AugmentationStack> {
    let mut transforms = match name {
        "base" | "supervised" => base(BASE_SCALE, size),
        "base_blur" => base(BASE_SCALE, size),
        "base_scale" | "simclr_original" | "base_scale_distort" | "base_scale_distort_shuffle" => base(STRONG_SCALE, size),
        "base_shuffle" | "base_distort_shuffle" => base(BASE_SCALE, size),
        _ => {
            return Err(Error::UnknownStack { name: name.to_string(), registry: STACK_NAMES.join(", ") });
        }
    };
    match name {
        "base_blur" | "simclr_original" => transforms.push(blur()),
        "base_scale_distort" => transforms.push(distort()),
        "base_scale_distort_shuffle" | "base_distort_shuffle" => {
            transforms.push(distort());
            transforms.push(shuffle());
        }
        "base_shuffle" => transforms.push(shuffle()),
        _ => {}
    }
    Ok(AugmentationStack { name: name.to_string(), transforms })
}

/// Two independently augmented views of one source patch.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub anchor: RgbImage,
    pub positive: RgbImage,
    pub patch_id: String,
}

pub fn generate_views<R: Rng + ?Sized>(
    patch_id: &str,
    image: &RgbImage,
    stack: &AugmentationStack,
    rng: &mut R,
) -> Result<ViewPair> {
    let anchor = stack.apply(image, rng)?;
    let positive = stack.apply(image, rng)?;
    Ok(ViewPair { anchor, positive, patch_id: patch_id.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn has(stack: &AugmentationStack, pred: impl Fn(&TransformKind) -> bool) -> Option<f64> {
        stack.find(pred).map(|t| t.probability)
    }

    #[test]
    fn simclr_original_contents() {
        let s = compose_stack("simclr_original").unwrap();
        assert_eq!(has(&s, |k| matches!(k, TransformKind::GaussianBlur { .. })), Some(0.5));
        let c = s.crop().unwrap();
        assert_eq!((c.scale_min, c.scale_max), (0.2, 1.0));
        assert_eq!(s.output_size(), 224);
    }

    #[test]
    fn base_contents() {
        let s = compose_stack("base").unwrap();
        assert!(has(&s, |k| matches!(k, TransformKind::GaussianBlur { .. })).is_none());
        assert!(has(&s, |k| matches!(k, TransformKind::GridDistort(_) | TransformKind::GridShuffle { .. })).is_none());
        let c = s.crop().unwrap();
        assert_eq!((c.scale_min, c.scale_max), (0.95, 1.0));
        assert_eq!(has(&s, |k| matches!(k, TransformKind::ColorJitter(_))), Some(0.8));
        assert_eq!(has(&s, |k| matches!(k, TransformKind::Flip { .. })), Some(0.5));
        assert_eq!(has(&s, |k| matches!(k, TransformKind::Rot90 { .. })), Some(0.5));
    }

    #[test]
    fn distort_shuffle_contents() {
        let s = compose_stack("base_distort_shuffle").unwrap();
        assert_eq!(has(&s, |k| matches!(k, TransformKind::GridDistort(_))), Some(0.5));
        assert_eq!(has(&s, |k| matches!(k, TransformKind::GridShuffle { rows: 3, cols: 3 })), Some(0.5));
        assert_eq!(s.crop().unwrap().scale_min, 0.95);
    }

    #[test]
    fn every_registered_stack_validates() {
        for name in STACK_NAMES {
            compose_stack(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn zero_strength_stacks_are_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let img = RgbImage::from_fn(48, 48, |x, y| image::Rgb([(x * 5) as u8, (y * 5) as u8, ((x + y) * 2) as u8]));
        for name in STACK_NAMES {
            let zero = compose_stack_sized(name, 48).unwrap().zero_strength();
            zero.validate().unwrap();
            let out = zero.apply(&img, &mut rng).unwrap();
            let worst = out.as_raw().iter().zip(img.as_raw()).map(|(a, b)| a.abs_diff(*b)).max().unwrap();
            assert!(worst <= 1, "{name}: {worst}");
        }
    }

    #[test]
    fn unknown_name_lists_registry() {
        let err = compose_stack("nope").unwrap_err().to_string();
        assert!(err.contains("simclr_original") && err.contains("nope"));
    }

    #[test]
    fn stack_definable_from_config_text() {
        let s = compose_stack_sized("base_scale_distort", 32).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: AugmentationStack = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn views_deterministic_per_seed() {
        let img = RgbImage::from_fn(40, 40, |x, y| image::Rgb([(x * 6) as u8, (y * 6) as u8, 90]));
        let s = compose_stack_sized("simclr_original", 32).unwrap();
        let a = generate_views("p", &img, &s, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = generate_views("p", &img, &s, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.anchor.dimensions(), (32, 32));
    }
}
