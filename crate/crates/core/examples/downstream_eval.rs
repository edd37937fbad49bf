//! Linear probe, fine-tuning and training from scratch on the same labeled
//! split, starting from one briefly pre-trained encoder.

use histoclr::contrastive::{load_encoder, pretrain, PretrainConfig, PretrainOptions};
use histoclr::data::{build_desk_corpus, DeskCorpusConfig, Split};
use histoclr::eval::{finetune, linear_probe, LabeledImages, ModelInit, ProbeConfig, Splits};

fn main() -> histoclr::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let corpus = build_desk_corpus(&DeskCorpusConfig { unsupervised_slides: 20, ..DeskCorpusConfig::default() })?;
    let train = LabeledImages::from_patch_set(&corpus.labeled, Split::Train)?;
    let test = LabeledImages::from_patch_set(&corpus.labeled, Split::Test)?;
    let images: Vec<_> = corpus.unsupervised.patches.into_iter().map(|p| p.pixels).collect();

    let config = PretrainConfig { epochs: 5, checkpoint_epochs: [5].into_iter().collect(), ..PretrainConfig::desk() };
    let run = std::env::temp_dir().join("histoclr_downstream");
    let _ = std::fs::remove_dir_all(&run);
    let outcome = pretrain(&config, &images, &run, &PretrainOptions::default())?;
    let (encoder, _) = load_encoder(&outcome.checkpoints[0].1)?;
    let splits = Splits::new(&train, &test);
    let size = config.input_size;

    let mut frozen = encoder.clone();
    let probe = linear_probe(&mut frozen, splits, &ProbeConfig { input_size: size, ..ProbeConfig::linear() })?;
    let (before, after) = probe.frozen_hash.clone().unwrap();
    println!("linear probe: {:.3} (encoder unchanged: {})", probe.report.accuracy, before == after);

    let short = |c: ProbeConfig| ProbeConfig { epochs: 10, input_size: size, ..c };
    let (ft, _) = finetune(ModelInit::Pretrained(encoder), splits, &short(ProbeConfig::finetune_breast()))?;
    println!("fine-tune:    {:.3}", ft.report.accuracy);
    let (scratch, _) = finetune(ModelInit::Random(config.encoder.clone()), splits, &short(ProbeConfig::scratch()))?;
    println!("scratch:      {:.3}", scratch.report.accuracy);
    println!("per-class accuracy (fine-tune): {:?}", ft.report.per_class_accuracy);
    Ok(())
}
