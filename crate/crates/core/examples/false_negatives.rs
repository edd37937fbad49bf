//! Anchor-negative similarity statistics for a random and a briefly
//! pre-trained encoder: how many negatives already look like positives.

use histoclr::augment::compose_stack_sized;
use histoclr::contrastive::{load_encoder, pretrain, PretrainConfig, PretrainOptions};
use histoclr::data::{build_desk_corpus, DeskCorpusConfig};
use histoclr::diagnostics::{embedding_batches, false_negative_stats, render_histogram, save_png, EmbeddingSource};
use histoclr::nn::Encoder;
use rand::SeedableRng;

fn main() -> histoclr::Result<()> {
    let corpus = build_desk_corpus(&DeskCorpusConfig { unsupervised_slides: 20, ..DeskCorpusConfig::default() })?;
    let images: Vec<_> = corpus.unsupervised.patches.into_iter().map(|p| p.pixels).collect();
    let config = PretrainConfig { epochs: 3, checkpoint_epochs: [3].into_iter().collect(), ..PretrainConfig::desk() };
    let run = std::env::temp_dir().join("histoclr_false_negatives");
    let _ = std::fs::remove_dir_all(&run);
    let outcome = pretrain(&config, &images, &run, &PretrainOptions::default())?;
    let stack = compose_stack_sized(&config.stack, config.input_size)?;
    let thresholds = [0.5, 0.7, 0.9];

    let random = Encoder::new(config.encoder.clone(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(1))?;
    let trained = load_encoder(&outcome.checkpoints[0].1)?.0;
    for (name, mut encoder) in [("random", random), ("pre-trained", trained)] {
        let batches = embedding_batches(&mut encoder, &images, &stack, 128, 4, EmbeddingSource::Projection, config.temperature, 0)?;
        let stats = false_negative_stats(&batches, &thresholds)?;
        println!("{name:<12} {} pairs, fraction above {:?}", stats.n_pairs, stats.fraction_above);
        save_png(&render_histogram(&stats.histogram, 400, 200), &run.join(format!("{name}_similarity.png")))?;
    }
    println!("histograms in {}", run.display());
    Ok(())
}
