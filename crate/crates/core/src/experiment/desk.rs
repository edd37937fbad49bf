//! The desk-scale reproduction: SimCLR pre-training on the synthetic corpus,
//! then linear probes of every checkpoint against a probe of the same network
//! at its random initialisation.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::{pretrain, PretrainConfig, PretrainOptions, RunStatus};
use crate::data::{build_desk_corpus, DeskCorpusConfig, Split};
use crate::diagnostics::{checkpoint_curve, CurveRow};
use crate::eval::{linear_probe, LabeledImages, ProbeConfig, Splits};
use crate::nn::Encoder;
use crate::rng::derive_seed_str;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskSettings {
    pub corpus: DeskCorpusConfig,
    pub pretrain: PretrainConfig,
    pub probe: ProbeConfig,
}

impl DeskSettings {
    /// 5 000 unsupervised and 500 labeled patches, small CNN, batch 256,
    /// 20 epochs, checkpoints every 5 epochs; everything seeded from `seed`.
    pub fn new(seed: u64) -> Self {
        let pretrain = PretrainConfig { seed, ..PretrainConfig::desk() };
        let probe = ProbeConfig { seed, input_size: pretrain.input_size, ..ProbeConfig::linear() };
        Self { corpus: DeskCorpusConfig { seed, ..DeskCorpusConfig::default() }, pretrain, probe }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskResult {
    pub seed: u64,
    pub status: RunStatus,
    pub losses: Vec<f64>,
    /// Probe of the pre-training initialisation, before any update.
    pub random_accuracy: f64,
    pub curve: Vec<CurveRow>,
}

impl DeskResult {
    /// Probe accuracy of the last checkpoint.
    pub fn ssl_accuracy(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |r| r.probe_accuracy)
    }
}

pub fn run_desk(settings: &DeskSettings, run_dir: &Path) -> Result<DeskResult> {
    let corpus = build_desk_corpus(&settings.corpus)?;
    let train = LabeledImages::from_patch_set(&corpus.labeled, Split::Train)?;
    let test = LabeledImages::from_patch_set(&corpus.labeled, Split::Test)?;
    let images: Vec<_> = corpus.unsupervised.patches.into_iter().map(|p| p.pixels).collect();
    let splits = Splits::new(&train, &test);

    let p = &settings.pretrain;
    let mut init = Encoder::new(p.encoder.clone(), &mut ChaCha8Rng::seed_from_u64(derive_seed_str(p.seed, "init")))?;
    let random_accuracy = linear_probe(&mut init, splits, &settings.probe)?.report.accuracy;
    log::info!("seed {}: random-init probe accuracy {random_accuracy:.4}", p.seed);

    let outcome = pretrain(p, &images, run_dir, &PretrainOptions::default())?;
    let curve = checkpoint_curve(&outcome.checkpoints, splits, &settings.probe)?;
    Ok(DeskResult { seed: p.seed, status: outcome.status, losses: outcome.losses(), random_accuracy, curve })
}
