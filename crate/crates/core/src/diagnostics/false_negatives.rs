//! Similarity statistics of anchor–negative pairs within contrastive batches.

use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentationStack;
use crate::contrastive::{normalize_rows, train::to_f64_matrix, EmbeddingBatch};
use crate::imaging::images_to_batch;
use crate::nn::{Encoder, Layer};
use crate::rng::rng_for_str;
use crate::{Error, Result};

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    /// Counts over uniform bins on [−1, 1]; the last bin is closed.
    pub histogram: Vec<u64>,
    pub bin_edges: Vec<f64>,
    /// `(threshold, fraction of pairs with similarity > threshold)`.
    pub fraction_above: Vec<(f64, f64)>,
    pub n_pairs: u64,
}

impl SimilarityStats {
    pub fn fraction(&self, threshold: f64) -> Option<f64> {
        self.fraction_above.iter().find(|(t, _)| *t == threshold).map(|(_, f)| *f)
    }
}

pub fn bin_index(s: f64) -> usize {
    (((s + 1.0) / 2.0 * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

/// Cosine similarities of every ordered anchor–negative pair `(i, k)`,
/// `k ∉ {i, pairing[i]}`, within each batch.
pub fn false_negative_stats(batches: &[EmbeddingBatch], thresholds: &[f64]) -> Result<SimilarityStats> {
    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    let mut above = vec![0u64; thresholds.len()];
    let mut n_pairs = 0u64;
    for b in batches {
        if b.embeddings.nrows() < 4 {
            return Err(Error::InvalidArgument(format!("batch of {} rows has fewer than 2 pairs", b.embeddings.nrows())));
        }
        if b.embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embeddings".into()));
        }
        let (u, _) = normalize_rows(&b.embeddings)?;
        let sims = u.dot(&u.t());
        let rows = u.nrows();
        for i in 0..rows {
            for k in 0..rows {
                if k == i || k == b.pairing[i] {
                    continue;
                }
                let s = sims[[i, k]].clamp(-1.0, 1.0);
                histogram[bin_index(s)] += 1;
                for (a, &t) in above.iter_mut().zip(thresholds) {
                    if s > t {
                        *a += 1;
                    }
                }
                n_pairs += 1;
            }
        }
    }
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("no batches given".into()));
    }
    let bin_edges = (0..=HISTOGRAM_BINS).map(|i| -1.0 + 2.0 * i as f64 / HISTOGRAM_BINS as f64).collect();
    let fraction_above = thresholds.iter().zip(&above).map(|(&t, &a)| (t, a as f64 / n_pairs as f64)).collect();
    Ok(SimilarityStats { histogram, bin_edges, fraction_above, n_pairs })
}

/// Where embeddings for the diagnostic are taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Projection,
    Backbone,
}

/// Builds `n_batches` batches of `pairs` random patches each, two views per
/// patch, embedded in inference mode.
pub fn embedding_batches(
    encoder: &mut Encoder,
    images: &[RgbImage],
    stack: &AugmentationStack,
    pairs: usize,
    n_batches: usize,
    source: EmbeddingSource,
    temperature: f64,
    seed: u64,
) -> Result<Vec<EmbeddingBatch>> {
    if pairs < 2 || images.len() < pairs {
        return Err(Error::InvalidArgument(format!("need at least 2 pairs from {} images, asked {pairs}", images.len())));
    }
    let mut rng = rng_for_str(seed, "false-negatives");
    let mut out = Vec::with_capacity(n_batches);
    let mut order: Vec<usize> = (0..images.len()).collect();
    for _ in 0..n_batches {
        order.shuffle(&mut rng);
        let idx = &order[..pairs];
        let mut views: Vec<RgbImage> = idx.iter().map(|&i| stack.apply(&images[i], &mut rng)).collect::<Result<_>>()?;
        for &i in idx {
            views.push(stack.apply(&images[i], &mut rng)?);
        }
        let x = images_to_batch(&views)?.into_dyn();
        let z = match source {
            EmbeddingSource::Projection => encoder.forward(&x, false)?,
            EmbeddingSource::Backbone => encoder.features(&x)?,
        };
        out.push(EmbeddingBatch::from_views(to_f64_matrix(&z)?, temperature)?);
    }
    Ok(out)
}
