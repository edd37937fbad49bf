//! Analysis tools: anchor–negative similarity statistics, checkpoint curves,
//! embedding export with PCA, and simple plots.

pub mod curve;
pub mod export;
pub mod false_negatives;
pub mod plot;

pub use curve::{checkpoint_curve, curve_csv, CurveRow};
pub use export::{
    balanced_sample, export_embeddings, write_embeddings_csv, write_projection_csv, EmbeddingExport, Pca,
    DEFAULT_EXPORT_SAMPLES,
};
pub use false_negatives::{bin_index, embedding_batches, false_negative_stats, EmbeddingSource, SimilarityStats, HISTOGRAM_BINS};
pub use plot::{render_histogram, render_scatter, save_png};

#[cfg(test)]
mod tests;
