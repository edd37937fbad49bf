//! Self-supervised pre-training loop with checkpointing and exact resume.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::RgbImage;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{nt_xent_loss_with_grad, EmbeddingBatch};
use crate::augment::compose_stack_sized;
use crate::imaging::images_to_batch;
use crate::nn::{cosine_anneal, zero_grads, Checkpoint, Encoder, EncoderConfig, Lars, LarsParams, Layer, Optimizer, Tensor};
use crate::rng::derive_seed_str;
use crate::{Error, Result};

pub const STATE_FILE: &str = "state.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    /// Pairs per optimisation step (`2N` views).
    pub batch_size: usize,
    /// Pairs per co-resident chunk when accumulating gradients. Negatives are
    /// only drawn within a chunk.
    pub micro_batch: Option<usize>,
    pub epochs: usize,
    pub base_lr: f64,
    pub temperature: f64,
    pub weight_decay: f64,
    pub trust_coefficient: f64,
    pub momentum: f64,
    pub stack: String,
    /// Side length of generated views.
    pub input_size: u32,
    pub seed: u64,
    pub checkpoint_epochs: BTreeSet<usize>,
    pub encoder: EncoderConfig,
    /// Epoch-mean loss above this multiple of the first epoch counts as divergence.
    pub divergence_factor: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            micro_batch: None,
            epochs: 200,
            base_lr: 1.2,
            temperature: 0.5,
            weight_decay: 1e-6,
            trust_coefficient: 0.001,
            momentum: 0.9,
            stack: "base_scale".into(),
            input_size: 224,
            seed: 0,
            checkpoint_epochs: [10, 20, 50, 100, 200].into_iter().collect(),
            encoder: EncoderConfig::default(),
            divergence_factor: 10.0,
        }
    }
}

impl PretrainConfig {
    /// Desk-scale recipe: `small_cnn` on 32-pixel views, batch 256, 20 epochs.
    pub fn desk() -> Self {
        Self {
            batch_size: 256,
            epochs: 20,
            base_lr: 0.3,
            input_size: 32,
            checkpoint_epochs: [5, 10, 15, 20].into_iter().collect(),
            encoder: EncoderConfig::small_cnn(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Err(Error::Config { key: key.into(), message });
        if self.batch_size < 2 {
            return bad("batch_size", format!("needs at least 2 pairs, got {}", self.batch_size));
        }
        if let Some(m) = self.micro_batch {
            if m < 2 {
                return bad("micro_batch", format!("needs at least 2 pairs, got {m}"));
            }
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", format!("must be positive, got {}", self.temperature));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr", format!("must be positive, got {}", self.base_lr));
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay", "must be non-negative".into());
        }
        if let Some(&e) = self.checkpoint_epochs.iter().find(|&&e| e == 0 || e > self.epochs) {
            return bad("checkpoint_epochs", format!("epoch {e} outside [1, {}]", self.epochs));
        }
        self.encoder.validate()?;
        compose_stack_sized(&self.stack, self.input_size)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
    Failed,
    /// Stopped early on request; resumable.
    Interrupted,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub run_id: String,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PretrainOptions {
    pub resume: bool,
    /// Stop (status `Interrupted`) after this epoch.
    pub stop_after_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub status: RunStatus,
    pub history: Vec<EpochMetrics>,
    /// `(epoch, path)` of every configured checkpoint present on disk.
    pub checkpoints: Vec<(usize, PathBuf)>,
    pub state_path: PathBuf,
    pub metrics_path: PathBuf,
    pub divergence: Option<String>,
}

impl PretrainOutcome {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|m| m.loss).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    config: PretrainConfig,
    encoder: EncoderConfig,
    rng: ChaCha8Rng,
    step: usize,
    history: Vec<EpochMetrics>,
}

pub fn checkpoint_path(run_dir: &Path, epoch: usize) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:04}.ckpt"))
}

/// Projections of `views` (anchors first, then positives in the same order)
/// in inference mode.
pub fn encode_project(encoder: &mut Encoder, views: &[RgbImage], temperature: f64) -> Result<EmbeddingBatch> {
    let x = images_to_batch(views)?.into_dyn();
    let z = encoder.forward(&x, false)?;
    EmbeddingBatch::from_views(to_f64_matrix(&z)?, temperature)
}

pub fn to_f64_matrix(t: &Tensor) -> Result<Array2<f64>> {
    let v = t.view().into_dimensionality::<ndarray::Ix2>().map_err(|_| Error::Shape {
        expected: "rank-2 output".into(),
        actual: format!("{:?}", t.shape()),
    })?;
    Ok(v.mapv(|x| x as f64))
}

/// Rebuilds an encoder from a pre-training checkpoint.
pub fn load_encoder(path: &Path) -> Result<(Encoder, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let cfg: EncoderConfig = serde_json::from_value(ck.metadata["encoder"].clone())
        .map_err(|e| Error::Checkpoint(format!("{}: no encoder config ({e})", path.display())))?;
    let mut enc = Encoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    ck.load_into(&mut enc)?;
    Ok((enc, ck))
}

fn write_metrics(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for m in history {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn append_metrics(path: &Path, m: &EpochMetrics) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(m)?;
    line.push(b'\n');
    f.write_all(&line)?;
    Ok(())
}

/// Trains `config.encoder` with NT-Xent on two views per image, writing
/// `metrics.jsonl`, `state.ckpt` (every epoch) and the configured epoch
/// checkpoints into `run_dir`.
pub fn pretrain(config: &PretrainConfig, images: &[RgbImage], run_dir: &Path, options: &PretrainOptions) -> Result<PretrainOutcome> {
    config.validate()?;
    if images.len() < 2 {
        return Err(Error::InvalidArgument(format!("pre-training needs at least 2 patches, got {}", images.len())));
    }
    let stack = compose_stack_sized(&config.stack, config.input_size)?;
    let run_id = run_dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    std::fs::create_dir_all(run_dir.join(CHECKPOINT_DIR))?;
    let state_path = run_dir.join(STATE_FILE);
    let metrics_path = run_dir.join(METRICS_FILE);

    let batch = config.batch_size.min(images.len());
    if batch < config.batch_size {
        log::warn!("batch size {} exceeds dataset size; using {batch}", config.batch_size);
    }
    let chunk = config.micro_batch.unwrap_or(batch).min(batch);
    if chunk < batch {
        log::info!(
            "gradient accumulation: {batch} pairs per step in chunks of {chunk}; negatives drawn only within each chunk"
        );
    }
    let steps_per_epoch = images.len().div_ceil(batch) - usize::from(images.len() % batch == 1);
    let total_steps = steps_per_epoch * config.epochs;

    let mut encoder = Encoder::new(config.encoder.clone(), &mut ChaCha8Rng::seed_from_u64(derive_seed_str(config.seed, "init")))?;
    let mut optimizer = Lars::new(LarsParams {
        trust_coefficient: config.trust_coefficient,
        momentum: config.momentum,
        weight_decay: config.weight_decay,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(config.seed, "pretrain"));
    let mut step = 0usize;
    let mut history: Vec<EpochMetrics> = Vec::new();

    if options.resume {
        if !state_path.exists() {
            return Err(Error::Checkpoint(format!("no checkpoint to resume in {}", run_dir.display())));
        }
        let state = Checkpoint::load(&state_path)?;
        let meta: StateMeta = serde_json::from_value(state.metadata.clone())?;
        if meta.config != *config {
            log::warn!("resuming with a configuration that differs from the stored one");
        }
        state.load_into(&mut encoder)?;
        optimizer.load_state(&state.tensor_map())?;
        rng = meta.rng;
        step = meta.step;
        history = meta.history;
        write_metrics(&metrics_path, &history)?;
        if history.len() >= config.epochs {
            log::info!("run `{run_id}` already completed {} epochs; nothing to resume", history.len());
        }
    } else {
        write_metrics(&metrics_path, &[])?;
    }

    let start = Instant::now();
    let time_offset = history.last().map_or(0.0, |m| m.wall_time_s);
    let mut status = RunStatus::Completed;
    let mut divergence = None;
    let mut order: Vec<usize> = (0..images.len()).collect();

    'epochs: for epoch in history.len() + 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        let epoch_lr = cosine_anneal(config.base_lr, step, total_steps)?;
        let (mut loss_sum, mut n_steps) = (0.0, 0usize);
        for idx in order.chunks(batch) {
            if idx.len() < 2 {
                continue;
            }
            let lr = cosine_anneal(config.base_lr, step.min(total_steps), total_steps)?;
            let mut anchors = Vec::with_capacity(idx.len());
            let mut positives = Vec::with_capacity(idx.len());
            for &i in idx {
                anchors.push(stack.apply(&images[i], &mut rng)?);
                positives.push(stack.apply(&images[i], &mut rng)?);
            }
            zero_grads(&mut encoder);
            let mut batch_loss = 0.0;
            let mut chunk_start = 0;
            while chunk_start < idx.len() {
                let mut end = (chunk_start + chunk).min(idx.len());
                // Never leave a single trailing pair.
                if idx.len() - end == 1 {
                    end = idx.len();
                }
                let views: Vec<&RgbImage> = anchors[chunk_start..end].iter().chain(&positives[chunk_start..end]).collect();
                let x = images_to_batch(views)?.into_dyn();
                let z = encoder.forward(&x, true)?;
                let eb = EmbeddingBatch::from_views(to_f64_matrix(&z)?, config.temperature)?;
                let out = match nt_xent_loss_with_grad(&eb) {
                    Ok(o) => o,
                    Err(e @ (Error::NonFinite(_) | Error::ZeroNorm { .. })) => {
                        status = RunStatus::Diverged;
                        divergence = Some(e.to_string());
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                let weight = (end - chunk_start) as f64 / idx.len() as f64;
                batch_loss += weight * out.loss;
                let g = out.grad.mapv(|v| (v * weight) as f32).into_dyn();
                encoder.backward(&g)?;
                chunk_start = end;
            }
            let mut params = encoder.params_mut();
            if let Err(e) = optimizer.step(&mut params, lr) {
                if matches!(e, Error::NonFinite(_)) {
                    status = RunStatus::Diverged;
                    divergence = Some(e.to_string());
                    break 'epochs;
                }
                return Err(e);
            }
            step += 1;
            loss_sum += batch_loss;
            n_steps += 1;
        }
        encoder.clear_cache();
        let loss = loss_sum / n_steps.max(1) as f64;
        let m = EpochMetrics {
            run_id: run_id.clone(),
            epoch,
            loss,
            lr: epoch_lr,
            wall_time_s: time_offset + start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}/{}: loss {loss:.5} lr {epoch_lr:.5}", config.epochs);
        append_metrics(&metrics_path, &m)?;
        history.push(m);
        if let Some(first) = history.first().map(|m| m.loss) {
            if !loss.is_finite() || loss > config.divergence_factor * first {
                status = RunStatus::Diverged;
                divergence = Some(format!("epoch {epoch} mean loss {loss} exceeds {}x first epoch {first}", config.divergence_factor));
                break;
            }
        }

        let mut state = Checkpoint::from_layer("pretrain_state", epoch, &encoder);
        state.tensors.extend(optimizer.state());
        state.metadata = serde_json::to_value(StateMeta {
            config: config.clone(),
            encoder: config.encoder.clone(),
            rng: rng.clone(),
            step,
            history: history.clone(),
        })?;
        state.save(&state_path)?;
        if config.checkpoint_epochs.contains(&epoch) {
            let mut ck = Checkpoint::from_layer("encoder", epoch, &encoder);
            ck.metadata = serde_json::json!({ "encoder": config.encoder, "epoch": epoch, "loss": loss, "run_id": run_id });
            ck.save(&checkpoint_path(run_dir, epoch))?;
        }
        if options.stop_after_epoch == Some(epoch) && epoch < config.epochs {
            status = RunStatus::Interrupted;
            break;
        }
    }

    if let Some(reason) = &divergence {
        log::warn!("run `{run_id}` diverged: {reason}");
    }
    let checkpoints = config
        .checkpoint_epochs
        .iter()
        .map(|&e| (e, checkpoint_path(run_dir, e)))
        .filter(|(_, p)| p.exists())
        .collect();
    Ok(PretrainOutcome { status, history, checkpoints, state_path, metrics_path, divergence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::Rng;

    fn tiny_images(n: usize, seed: u64) -> Vec<RgbImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let base: [u8; 3] = [rng.random(), rng.random(), rng.random()];
                RgbImage::from_fn(20, 20, |x, y| {
                    let t = ((x * 7 + y * 3) % 11) as u8 * 6;
                    Rgb([base[0].wrapping_add(t), base[1], base[2].wrapping_sub(t)])
                })
            })
            .collect()
    }

    fn tiny_config() -> PretrainConfig {
        PretrainConfig {
            batch_size: 8,
            epochs: 4,
            base_lr: 0.3,
            input_size: 16,
            checkpoint_epochs: [2, 4].into_iter().collect(),
            encoder: EncoderConfig { base_width: 4, projection_hidden: 16, projection_dim: 8, ..EncoderConfig::small_cnn() },
            ..PretrainConfig::default()
        }
    }

    #[test]
    fn writes_metrics_and_configured_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        let out = pretrain(&tiny_config(), &tiny_images(20, 1), &run, &PretrainOptions::default()).unwrap();
        assert_eq!(out.status, RunStatus::Completed);
        assert_eq!(out.history.len(), 4);
        assert_eq!(out.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(), vec![2, 4]);
        assert_eq!(std::fs::read_dir(run.join(CHECKPOINT_DIR)).unwrap().count(), 2);
        let lines = std::fs::read_to_string(&out.metrics_path).unwrap();
        assert_eq!(lines.lines().count(), 4);
        let first: EpochMetrics = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!((first.run_id.as_str(), first.epoch), ("run", 1));
        let (enc, ck) = load_encoder(&out.checkpoints[1].1).unwrap();
        assert_eq!(ck.epoch, 4);
        assert_eq!(enc.config, tiny_config().encoder);
    }

    #[test]
    fn interrupted_then_resumed_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let images = tiny_images(20, 2);
        let cfg = tiny_config();
        let full = pretrain(&cfg, &images, &dir.path().join("a"), &PretrainOptions::default()).unwrap();
        let b = dir.path().join("b");
        let part = pretrain(&cfg, &images, &b, &PretrainOptions { resume: false, stop_after_epoch: Some(2) }).unwrap();
        assert_eq!(part.status, RunStatus::Interrupted);
        assert_eq!(part.history.len(), 2);
        let resumed = pretrain(&cfg, &images, &b, &PretrainOptions { resume: true, stop_after_epoch: None }).unwrap();
        assert_eq!(resumed.status, RunStatus::Completed);
        assert_eq!(resumed.losses(), full.losses());
        let epochs: Vec<usize> = std::fs::read_to_string(&resumed.metrics_path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<EpochMetrics>(l).unwrap().epoch)
            .collect();
        assert_eq!(epochs, vec![1, 2, 3, 4]);
        let again = pretrain(&cfg, &images, &b, &PretrainOptions { resume: true, stop_after_epoch: None }).unwrap();
        assert_eq!(again.history.len(), 4);
    }

    #[test]
    fn resume_without_state_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let r = pretrain(&tiny_config(), &tiny_images(8, 3), &dir.path().join("x"), &PretrainOptions { resume: true, stop_after_epoch: None });
        assert!(matches!(r, Err(Error::Checkpoint(_))));
    }

    #[test]
    fn huge_learning_rate_is_flagged_as_divergence() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PretrainConfig { base_lr: 1e30, momentum: 0.0, ..tiny_config() };
        let out = pretrain(&cfg, &tiny_images(16, 4), &dir.path().join("d"), &PretrainOptions::default()).unwrap();
        assert_eq!(out.status, RunStatus::Diverged);
        assert!(out.divergence.is_some());
    }

    #[test]
    fn accumulation_runs_in_chunks() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PretrainConfig { micro_batch: Some(3), epochs: 1, checkpoint_epochs: BTreeSet::new(), ..tiny_config() };
        let out = pretrain(&cfg, &tiny_images(16, 5), &dir.path().join("m"), &PretrainOptions::default()).unwrap();
        assert!(out.history[0].loss.is_finite());
    }

    #[test]
    fn config_validation_names_keys() {
        let e = PretrainConfig { temperature: 0.0, ..PretrainConfig::default() }.validate().unwrap_err();
        assert!(e.to_string().contains("temperature"));
        let e = PretrainConfig { epochs: 20, ..PretrainConfig::default() }.validate().unwrap_err();
        assert!(e.to_string().contains("checkpoint_epochs"));
        let e = PretrainConfig { batch_size: 1, ..PretrainConfig::default() }.validate().unwrap_err();
        assert!(e.to_string().contains("batch_size"));
        assert!(PretrainConfig::default().validate().is_ok());
        assert!(PretrainConfig::desk().validate().is_ok());
    }
}
