//! Contrastive objective and self-supervised pre-training loop.

pub mod loss;
pub mod train;

pub use loss::{
    contrastive_loss, cosine_similarity, info_nce_loss, normalize_rows, nt_xent_loss, nt_xent_loss_with_grad,
    similarity_matrix, EmbeddingBatch, LossOutput, Similarity,
};
pub use train::{
    checkpoint_path, encode_project, load_encoder, pretrain, EpochMetrics, PretrainConfig, PretrainOptions, PretrainOutcome,
    RunStatus,
};
