//! Stochastic view generation.

pub mod blur;
pub mod color;
pub mod crop;
pub mod distort;
pub mod geometric;
pub mod stack;

pub use blur::{blur_with_sigma, gaussian_blur, gaussian_kernel};
pub use color::{adjust_brightness, adjust_contrast, adjust_hue, adjust_saturation, color_jitter, JitterParams};
pub use crop::{random_resized_crop, sample_crop_box, CropBox, CropParams};
pub use distort::{grid_distort, BorderMode, DistortParams};
pub use geometric::{flip_rot90, grid_shuffle, shuffle_tiles, Dihedral, FlipRotParams};
pub use stack::{
    compose_stack, compose_stack_sized, generate_views, AugmentationStack, TransformKind, TransformSpec, ViewPair,
    DEFAULT_INPUT_SIZE, STACK_NAMES,
};
