//! Generate annotated synthetic slides, detect tissue, and sample unsupervised
//! and supervised patch datasets with manifests.
//!
//! cargo run --release --example synthetic_corpus -- /tmp/corpus

use std::path::PathBuf;

use histoclr::data::{
    build_supervised_dataset, build_unsupervised_dataset, compute_tissue_mask, generate_synthetic_slide, load_manifest,
    make_slide_subsets, GridConfig, LabeledSlide, SlideSource, Split, SupervisedConfig, SyntheticSlideSpec,
};

fn main() -> histoclr::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/synthetic_corpus".into()));
    let spec = SyntheticSlideSpec::three_class(560, 560);
    let slides: Vec<_> = (0..8).map(|i| generate_synthetic_slide(&spec, &format!("slide{i}"), i)).collect::<Result<_, _>>()?;

    let low = slides[0].slide.levels().last().copied().unwrap();
    let thumb = slides[0].slide.read_region(low.mpp, 0, 0, low.width, low.height)?;
    let mask = compute_tissue_mask(&thumb);
    println!("slide0: {}x{} thumbnail, tissue fraction {:.2}", low.width, low.height, mask.count() as f64 / (low.width * low.height) as f64);

    let grid = GridConfig { patch_size: 40, mpp: spec.mpp, ..GridConfig::default() };
    let refs: Vec<&dyn SlideSource> = slides[..4].iter().map(|s| &s.slide as &dyn SlideSource).collect();
    let unsup = build_unsupervised_dataset(&refs, &grid, 50, 0)?;
    unsup.save(&out.join("unsupervised"), "manifest.csv")?;
    println!("unsupervised: {} patches", unsup.patches.len());

    let labeled: Vec<LabeledSlide<'_>> = slides[4..]
        .iter()
        .enumerate()
        .map(|(i, s)| LabeledSlide { slide: &s.slide, labels: &s.labels, labels_mpp: spec.mpp, split: if i < 3 { Split::Train } else { Split::Test } })
        .collect();
    let names: Vec<String> = spec.classes.iter().map(|c| c.name.clone()).collect();
    let config = SupervisedConfig { grid, train_per_class_cap: 40, val_per_class: 0, test_per_class: 15, min_class_fraction: 0.75 };
    let sup = build_supervised_dataset(&labeled, &names, &config, 0)?;
    let manifest = sup.save(&out.join("supervised"), "manifest.csv")?;
    for ((split, class), n) in manifest.class_counts() {
        println!("{split} {}: {n}", names[class]);
    }

    let train_ids: Vec<String> = manifest.split(Split::Train).slide_ids().into_iter().collect();
    for fold in make_slide_subsets(&train_ids, &[1, 2, 3], 2, 0)? {
        println!("fold {}: {:?}", fold.fold, fold.subsets);
    }
    let reloaded = load_manifest(&out.join("supervised/manifest.csv"))?;
    println!("reloaded {} records from {}", reloaded.len(), out.display());
    Ok(())
}
