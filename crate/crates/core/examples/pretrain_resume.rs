//! Contrastive pre-training on a small synthetic corpus, interrupted halfway
//! and resumed; the resumed run reproduces the uninterrupted losses.

use histoclr::contrastive::{load_encoder, pretrain, PretrainConfig, PretrainOptions};
use histoclr::data::{build_desk_corpus, DeskCorpusConfig};

fn main() -> histoclr::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let corpus = build_desk_corpus(&DeskCorpusConfig { unsupervised_slides: 10, ..DeskCorpusConfig::default() })?;
    let images: Vec<_> = corpus.unsupervised.patches.into_iter().map(|p| p.pixels).collect();
    let config = PretrainConfig { batch_size: 128, epochs: 4, checkpoint_epochs: [2, 4].into_iter().collect(), ..PretrainConfig::desk() };
    let root = std::env::temp_dir().join("histoclr_pretrain_resume");
    let _ = std::fs::remove_dir_all(&root);

    let full = pretrain(&config, &images, &root.join("full"), &PretrainOptions::default())?;
    let part = root.join("part");
    let stopped = pretrain(&config, &images, &part, &PretrainOptions { resume: false, stop_after_epoch: Some(2) })?;
    println!("stopped: {:?} after {} epochs", stopped.status, stopped.history.len());
    let resumed = pretrain(&config, &images, &part, &PretrainOptions { resume: true, stop_after_epoch: None })?;
    println!("uninterrupted {:?}", full.losses());
    println!("resumed       {:?}", resumed.losses());

    let (encoder, checkpoint) = load_encoder(&resumed.checkpoints.last().unwrap().1)?;
    println!("final checkpoint: epoch {}, {} features, metadata {}", checkpoint.epoch, encoder.feature_dim(), checkpoint.metadata);
    Ok(())
}
