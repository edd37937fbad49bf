//! Desk-scale synthetic corpus: unsupervised patches from one pool of slides,
//! labeled train/test patches from disjoint slides.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetKind, PatchSet};
use super::patch::Split;
use super::sampling::{build_supervised_dataset, build_unsupervised_dataset, GridConfig, LabeledSlide, SupervisedConfig};
use super::slide::SlideSource;
use super::synthetic::{generate_synthetic_slide, SyntheticSlide, SyntheticSlideSpec};
use crate::rng::{derive_seed_str, rng_for_str};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskCorpusConfig {
    pub slide: SyntheticSlideSpec,
    pub patch_size: u32,
    pub unsupervised_slides: usize,
    pub max_per_slide: usize,
    pub train_slides: usize,
    pub test_slides: usize,
    /// Exact number of labeled training patches (split as evenly as the data allow).
    pub labeled_train: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for DeskCorpusConfig {
    /// 100 slides × 50 patches = 5 000 unsupervised patches of 40 px,
    /// 500 labeled training patches, 100 test patches per class.
    fn default() -> Self {
        Self {
            slide: SyntheticSlideSpec::three_class(560, 560),
            patch_size: 40,
            unsupervised_slides: 100,
            max_per_slide: 50,
            train_slides: 12,
            test_slides: 10,
            labeled_train: 500,
            test_per_class: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskCorpus {
    pub unsupervised: PatchSet,
    /// Train and test patches; `split` tells them apart.
    pub labeled: PatchSet,
}

fn generate(spec: &SyntheticSlideSpec, prefix: &str, n: usize, seed: u64) -> Result<Vec<SyntheticSlide>> {
    (0..n)
        .map(|i| {
            let id = format!("{prefix}{i:03}");
            generate_synthetic_slide(spec, &id, derive_seed_str(seed, &id))
        })
        .collect()
}

pub fn build_desk_corpus(config: &DeskCorpusConfig) -> Result<DeskCorpus> {
    let grid = GridConfig { patch_size: config.patch_size, mpp: config.slide.mpp, ..GridConfig::default() };
    let unsup_slides = generate(&config.slide, "u", config.unsupervised_slides, config.seed)?;
    let refs: Vec<&dyn SlideSource> = unsup_slides.iter().map(|s| &s.slide as &dyn SlideSource).collect();
    let unsupervised = build_unsupervised_dataset(&refs, &grid, config.max_per_slide, config.seed)?;
    drop(unsup_slides);

    let train = generate(&config.slide, "tr", config.train_slides, config.seed)?;
    let test = generate(&config.slide, "te", config.test_slides, config.seed)?;
    let n_classes = config.slide.n_classes();
    let class_names: Vec<String> = config.slide.classes.iter().map(|c| c.name.clone()).collect();
    let labeled_slides: Vec<LabeledSlide<'_>> = train
        .iter()
        .map(|s| (s, Split::Train))
        .chain(test.iter().map(|s| (s, Split::Test)))
        .map(|(s, split)| LabeledSlide { slide: &s.slide, labels: &s.labels, labels_mpp: config.slide.mpp, split })
        .collect();
    let sup = SupervisedConfig {
        grid,
        train_per_class_cap: config.labeled_train.div_ceil(n_classes),
        val_per_class: 0,
        test_per_class: config.test_per_class,
        min_class_fraction: 0.75,
    };
    let mut labeled = build_supervised_dataset(&labeled_slides, &class_names, &sup, config.seed)?;

    // Trim the training split to the exact requested size.
    let train_idx: Vec<usize> = (0..labeled.patches.len()).filter(|&i| labeled.patches[i].split == Split::Train).collect();
    if train_idx.len() > config.labeled_train {
        let mut rng = rng_for_str(config.seed, "desk-trim");
        let drop: std::collections::HashSet<usize> = index::sample(&mut rng, train_idx.len(), train_idx.len() - config.labeled_train)
            .into_iter()
            .map(|k| train_idx[k])
            .collect();
        let mut i = 0;
        labeled.patches.retain(|_| {
            let keep = !drop.contains(&i);
            i += 1;
            keep
        });
    }
    debug_assert_eq!(labeled.kind, DatasetKind::Supervised);
    Ok(DeskCorpus { unsupervised, labeled })
}
