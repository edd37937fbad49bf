//! Slide ingestion, tissue detection, patch sampling and manifests.

pub mod desk;
pub mod manifest;
pub mod patch;
pub mod sampling;
pub mod slide;
pub mod subsets;
pub mod synthetic;
pub mod tissue;

pub use desk::{build_desk_corpus, DeskCorpus, DeskCorpusConfig};
pub use manifest::{load_manifest, write_manifest, DatasetKind, Manifest, PatchRecord, PatchSet};
pub use patch::{Patch, Split};
pub use sampling::{
    build_supervised_dataset, build_unsupervised_dataset, sample_slide, sample_unsupervised_patches, GridConfig,
    LabeledSlide, SupervisedConfig,
};
pub use slide::{open_slide_dir, write_slide_dir, InMemorySlide, SlideLevel, SlideSource};
pub use subsets::{make_slide_subsets, subset_manifest, FoldSubsets};
pub use synthetic::{generate_synthetic_slide, LabelMask, SyntheticSlide, SyntheticSlideSpec, BACKGROUND_LABEL};
pub use tissue::{compute_tissue_mask, otsu_threshold, BinaryMask};
