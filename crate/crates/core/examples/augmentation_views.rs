//! Positive pairs from every registered augmentation stack, saved as PNGs.
//!
//! cargo run --release --example augmentation_views -- /tmp/views

use std::path::PathBuf;

use histoclr::augment::{compose_stack, generate_views, STACK_NAMES};
use histoclr::data::{generate_synthetic_slide, sample_slide, GridConfig, SyntheticSlideSpec};
use image::RgbImage;
use rand::SeedableRng;

fn main() -> histoclr::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/augmentation_views".into()));
    std::fs::create_dir_all(&out)?;
    let spec = SyntheticSlideSpec::three_class(1024, 1024);
    let slide = generate_synthetic_slide(&spec, "demo", 1)?;
    let patches = sample_slide(&slide.slide, &GridConfig { patch_size: 256, ..GridConfig::default() }, 1, 0)?;
    let patch = &patches[0];
    patch.pixels.save(out.join("source.png"))?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for name in STACK_NAMES {
        let stack = compose_stack(name)?;
        let pair = generate_views(&patch.patch_id, &patch.pixels, &stack, &mut rng)?;
        let mut strip = RgbImage::new(448, 224);
        image::imageops::replace(&mut strip, &pair.anchor, 0, 0);
        image::imageops::replace(&mut strip, &pair.positive, 224, 0);
        strip.save(out.join(format!("{name}.png")))?;
        println!("{name:<28} {} transforms", stack.transforms.len());
    }
    println!("wrote pairs to {}", out.display());
    Ok(())
}
