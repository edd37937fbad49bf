//! Nested slide subsets repeated over folds.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use crate::error::invalid;
use crate::rng::rng_for;
use crate::Result;

/// Slide subsets of one fold, keyed by subset size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSubsets {
    pub fold: usize,
    pub subsets: BTreeMap<usize, Vec<String>>,
}

/// Draws, per fold, one random ordering of the training slides and takes its
/// prefixes as subsets, so smaller subsets are contained in larger ones. Folds
/// are drawn independently and may overlap.
pub fn make_slide_subsets(train_slide_ids: &[String], sizes: &[usize], n_folds: usize, seed: u64) -> Result<Vec<FoldSubsets>> {
    if n_folds == 0 {
        return Err(invalid("n_folds must be at least 1"));
    }
    let unique: BTreeSet<&String> = train_slide_ids.iter().collect();
    if unique.len() != train_slide_ids.len() {
        return Err(invalid("training slide ids must be unique"));
    }
    if let Some(&too_big) = sizes.iter().find(|&&s| s > train_slide_ids.len()) {
        return Err(invalid(format!(
            "subset size {too_big} exceeds the {} available training slides",
            train_slide_ids.len()
        )));
    }
    if sizes.contains(&0) {
        return Err(invalid("subset sizes must be positive"));
    }
    let mut sorted: Vec<String> = train_slide_ids.to_vec();
    sorted.sort();
    Ok((0..n_folds)
        .map(|fold| {
            let mut order = sorted.clone();
            order.shuffle(&mut rng_for(seed, fold as u64));
            let subsets = sizes
                .iter()
                .map(|&s| {
                    let mut ids = order[..s].to_vec();
                    ids.sort();
                    (s, ids)
                })
                .collect();
            FoldSubsets { fold, subsets }
        })
        .collect())
}

/// Every record of the selected slides, tagged with the fold index.
pub fn subset_manifest(manifest: &Manifest, slide_ids: &[String], fold: usize) -> Manifest {
    let keep: BTreeSet<&str> = slide_ids.iter().map(String::as_str).collect();
    let mut m = manifest.filter(|r| keep.contains(r.slide_id.as_str()));
    for r in &mut m.records {
        r.fold = Some(fold as u32);
    }
    m
}
