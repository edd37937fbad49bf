//! Supervised evaluation protocols: linear probe on frozen features,
//! fine-tuning, and training from random initialisation.

use image::RgbImage;
use ndarray::{Array2, Axis, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, weighted_sample, weighted_sampler_weights, MetricsReport};
use crate::augment::{compose_stack_sized, AugmentationStack};
use crate::data::{DatasetKind, Manifest, PatchSet, Split};
use crate::imaging::{images_to_batch, resize};
use crate::nn::{
    cosine_anneal, weights_hash, zero_grads, Adam, Classifier, Encoder, EncoderConfig, Layer, Linear, Optimizer, Sgd, Tensor,
};
use crate::rng::derive_seed_str;
use crate::{Error, Result};

/// Images with integer labels, in memory.
#[derive(Debug, Clone, Default)]
pub struct LabeledImages {
    pub ids: Vec<String>,
    pub images: Vec<RgbImage>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledImages {
    pub fn new(ids: Vec<String>, images: Vec<RgbImage>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if ids.len() != images.len() || labels.len() != images.len() {
            return Err(Error::Shape {
                expected: format!("{} ids, images and labels", images.len()),
                actual: format!("{} ids, {} labels", ids.len(), labels.len()),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::InvalidArgument(format!("label {l} outside {} classes", class_names.len())));
        }
        Ok(Self { ids, images, labels, class_names })
    }

    pub fn from_manifest(manifest: &Manifest) -> Result<Self> {
        if manifest.kind != DatasetKind::Supervised {
            return Err(Error::Manifest("expected a supervised manifest".into()));
        }
        let class_names = manifest
            .class_names
            .clone()
            .unwrap_or_else(|| (0..manifest.n_classes()).map(|c| format!("class_{c}")).collect());
        let ids = manifest.records.iter().map(|r| r.patch_id.clone()).collect();
        Self::new(ids, manifest.load_images()?, manifest.labels(), class_names)
    }

    /// Labeled patches of one split of an in-memory patch set.
    pub fn from_patch_set(set: &PatchSet, split: Split) -> Result<Self> {
        let class_names = set.class_names.clone().ok_or_else(|| Error::Manifest("expected a supervised patch set".into()))?;
        let mut ids = Vec::new();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for p in set.patches.iter().filter(|p| p.split == split) {
            let label = p.label.ok_or_else(|| Error::Manifest(format!("patch `{}` has no label", p.patch_id)))?;
            ids.push(p.patch_id.clone());
            images.push(p.pixels.clone());
            labels.push(label);
        }
        Self::new(ids, images, labels, class_names)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    Linear,
    Finetune,
    Scratch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdNesterov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub mode: ProbeMode,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub initial_lr: f64,
    pub weight_decay: f64,
    /// Momentum for SGD; ignored by Adam.
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub stack: String,
    pub input_size: u32,
    /// Apply the supervised stack to training images every epoch.
    pub augment: bool,
    /// Evaluate on the test set after every epoch (learning curves).
    pub track_test_accuracy: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self::linear()
    }
}

impl ProbeConfig {
    /// Adam, lr 0.01, 20 epochs.
    pub fn linear() -> Self {
        Self {
            mode: ProbeMode::Linear,
            optimizer: OptimizerKind::Adam,
            epochs: 20,
            initial_lr: 0.01,
            weight_decay: 0.0,
            momentum: 0.0,
            batch_size: 64,
            seed: 0,
            stack: "supervised".into(),
            input_size: 224,
            augment: true,
            track_test_accuracy: false,
        }
    }

    /// Adam, lr 1e-3, weight decay 1e-4, 50 epochs.
    pub fn finetune_breast() -> Self {
        Self { mode: ProbeMode::Finetune, epochs: 50, initial_lr: 1e-3, weight_decay: 1e-4, ..Self::linear() }
    }

    /// SGD with Nesterov momentum 0.9, lr 1e-4, 50 epochs.
    pub fn finetune_skin() -> Self {
        Self {
            mode: ProbeMode::Finetune,
            optimizer: OptimizerKind::SgdNesterov,
            epochs: 50,
            initial_lr: 1e-4,
            momentum: 0.9,
            ..Self::linear()
        }
    }

    /// Adam, lr 1e-3, 50 epochs, random initialisation.
    pub fn scratch() -> Self {
        Self { mode: ProbeMode::Scratch, epochs: 50, initial_lr: 1e-3, ..Self::linear() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| Err(Error::Config { key: key.into(), message: message.into() });
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr", "must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2");
        }
        compose_stack_sized(&self.stack, self.input_size)?;
        Ok(())
    }

    fn optimizer(&self) -> Box<dyn Optimizer> {
        match self.optimizer {
            OptimizerKind::Adam => Box::new(Adam::new(self.weight_decay)),
            OptimizerKind::SgdNesterov => Box::new(Sgd::new(self.momentum, true, self.weight_decay)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Test metrics of the final-epoch model.
    pub report: MetricsReport,
    pub history: Vec<EpochLog>,
    /// Hash of the trainable model right after initialisation.
    pub init_hash: String,
    /// Encoder hash before and after a linear probe.
    pub frozen_hash: Option<(String, String)>,
}

/// Training, optional validation and test data of one run.
#[derive(Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a LabeledImages,
    pub val: Option<&'a LabeledImages>,
    pub test: &'a LabeledImages,
}

impl<'a> Splits<'a> {
    pub fn new(train: &'a LabeledImages, test: &'a LabeledImages) -> Self {
        Self { train, val: None, test }
    }

    fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        if self.test.is_empty() {
            return Err(Error::InvalidArgument("empty test set".into()));
        }
        for other in std::iter::once(self.test).chain(self.val) {
            if other.class_names != self.train.class_names {
                return Err(Error::Manifest(format!(
                    "label sets differ: {:?} vs {:?}",
                    self.train.class_names, other.class_names
                )));
            }
        }
        Ok(())
    }
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let l = logits.view().into_dimensionality::<Ix2>().map_err(|_| Error::Shape {
        expected: "N x C logits".into(),
        actual: format!("{:?}", logits.shape()),
    })?;
    let n = l.nrows();
    let mut grad = Array2::<f32>::zeros(l.raw_dim());
    let mut loss = 0.0;
    for (i, row) in l.axis_iter(Axis(0)).enumerate() {
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() - (row[labels[i]] as f64 - m);
        for (c, e) in exps.iter().enumerate() {
            let p = e / z - if c == labels[i] { 1.0 } else { 0.0 };
            grad[[i, c]] = (p / n as f64) as f32;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("classification loss".into()));
    }
    Ok((loss / n as f64, grad.into_dyn()))
}

fn fit_size(img: &RgbImage, size: u32) -> RgbImage {
    if img.width() == size && img.height() == size {
        img.clone()
    } else {
        resize(img, size, size)
    }
}

fn prepare(images: &[&RgbImage], stack: Option<&AugmentationStack>, size: u32, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let views: Vec<RgbImage> = match stack {
        Some(s) => images.iter().map(|img| s.apply(img, rng)).collect::<Result<_>>()?,
        None => images.iter().map(|img| fit_size(img, size)).collect(),
    };
    Ok(images_to_batch(&views)?.into_dyn())
}

/// Runs `model` over `images` (resized, no augmentation) in inference mode.
fn infer(model: &mut dyn Layer, images: &[RgbImage], size: u32) -> Result<Array2<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rows = Vec::new();
    for chunk in images.chunks(256) {
        let refs: Vec<&RgbImage> = chunk.iter().collect();
        let y = model.forward(&prepare(&refs, None, size, &mut rng)?, false)?;
        rows.push(y.into_dimensionality::<Ix2>().map_err(|e| Error::InvalidArgument(e.to_string()))?);
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn report_from_logits(logits: &Array2<f32>, labels: &[usize], n_classes: usize) -> Result<MetricsReport> {
    let mut preds = Vec::with_capacity(labels.len());
    let mut scores = Vec::with_capacity(labels.len());
    for row in logits.axis_iter(Axis(0)) {
        let (arg, _) = row.iter().enumerate().fold((0, f32::NEG_INFINITY), |(ai, av), (i, &v)| if v > av { (i, v) } else { (ai, av) });
        preds.push(arg);
        if n_classes == 2 {
            scores.push(1.0 / (1.0 + ((row[0] - row[1]) as f64).exp()));
        }
    }
    compute_metrics(labels, &preds, (n_classes == 2).then_some(scores.as_slice()), n_classes)
}

/// Test metrics of a classifier in inference mode.
pub fn evaluate(model: &mut Classifier, test: &LabeledImages, input_size: u32) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let logits = infer(model, &test.images, input_size)?;
    report_from_logits(&logits, &test.labels, test.n_classes())
}

/// Shared epoch loop: weighted sampling with replacement, cosine-annealed lr.
fn train_loop(
    config: &ProbeConfig,
    labels: &[usize],
    rng: &mut ChaCha8Rng,
    mut step: impl FnMut(&[usize], f64, &mut ChaCha8Rng) -> Result<f64>,
    mut after_epoch: impl FnMut() -> Result<(Option<f64>, Option<f64>)>,
) -> Result<Vec<EpochLog>> {
    let weights = weighted_sampler_weights(labels)?;
    let n = labels.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let total = batches_per_epoch * config.epochs;
    let mut t = 0;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let draws = weighted_sample(&weights, n, rng)?;
        let epoch_lr = cosine_anneal(config.initial_lr, t, total)?;
        let (mut loss, mut batches) = (0.0, 0);
        for idx in draws.chunks(config.batch_size) {
            let lr = cosine_anneal(config.initial_lr, t, total)?;
            t += 1;
            if idx.len() < 2 {
                continue;
            }
            loss += step(idx, lr, rng)?;
            batches += 1;
        }
        let (val_accuracy, test_accuracy) = after_epoch()?;
        history.push(EpochLog { epoch, train_loss: loss / batches.max(1) as f64, lr: epoch_lr, val_accuracy, test_accuracy });
        log::debug!("supervised epoch {epoch}: loss {:.4}", loss / batches.max(1) as f64);
    }
    Ok(history)
}

/// Trains a linear layer on frozen backbone features (pre-projection) of `encoder`.
/// The encoder is only run in inference mode and never updated.
pub fn linear_probe(encoder: &mut Encoder, splits: Splits<'_>, config: &ProbeConfig) -> Result<ProbeResult> {
    config.validate()?;
    splits.validate()?;
    let before = weights_hash(encoder);
    let stack = compose_stack_sized(&config.stack, config.input_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(config.seed, "probe"));
    let n_classes = splits.train.n_classes();
    let mut head = Linear::new("probe", encoder.feature_dim(), n_classes, &mut rng);
    let init_hash = weights_hash(&head);
    let mut opt = config.optimizer();
    let size = config.input_size;

    let fixed_train = if config.augment { None } else { Some(infer(&mut encoder.backbone, &splits.train.images, size)?) };
    let test_feats = infer(&mut encoder.backbone, &splits.test.images, size)?;
    let val_feats = splits.val.map(|v| infer(&mut encoder.backbone, &v.images, size)).transpose()?;

    let head_cell = std::cell::RefCell::new(&mut head);
    let backbone = std::cell::RefCell::new(&mut encoder.backbone);
    let history = train_loop(
        config,
        &splits.train.labels,
        &mut rng,
        |idx, lr, rng| {
            let feats = match &fixed_train {
                Some(f) => f.select(Axis(0), idx).into_dyn(),
                None => {
                    let refs: Vec<&RgbImage> = idx.iter().map(|&i| &splits.train.images[i]).collect();
                    backbone.borrow_mut().forward(&prepare(&refs, Some(&stack), size, rng)?, false)?
                }
            };
            let labels: Vec<usize> = idx.iter().map(|&i| splits.train.labels[i]).collect();
            let mut head = head_cell.borrow_mut();
            zero_grads(&mut **head);
            let logits = head.forward(&feats, true)?;
            let (loss, g) = softmax_cross_entropy(&logits, &labels)?;
            head.backward(&g)?;
            opt.step(&mut head.params_mut(), lr)?;
            Ok(loss)
        },
        || {
            let mut head = head_cell.borrow_mut();
            let acc = |feats: &Array2<f32>, labels: &[usize], head: &mut Linear| -> Result<f64> {
                let logits = head.forward(&feats.clone().into_dyn(), false)?;
                let l = logits.into_dimensionality::<Ix2>().map_err(|e| Error::InvalidArgument(e.to_string()))?;
                Ok(report_from_logits(&l, labels, n_classes)?.accuracy)
            };
            let val = match (&val_feats, splits.val) {
                (Some(f), Some(v)) => Some(acc(f, &v.labels, &mut head)?),
                _ => None,
            };
            let test = if config.track_test_accuracy { Some(acc(&test_feats, &splits.test.labels, &mut head)?) } else { None };
            Ok((val, test))
        },
    )?;
    head.clear_cache();
    let logits = head.forward(&test_feats.into_dyn(), false)?.into_dimensionality::<Ix2>().expect("rank 2");
    let report = report_from_logits(&logits, &splits.test.labels, n_classes)?;
    let after = weights_hash(encoder);
    if before != after {
        return Err(Error::InvalidArgument("encoder weights changed during a linear probe".into()));
    }
    Ok(ProbeResult { report, history, init_hash, frozen_hash: Some((before, after)) })
}

/// Initial weights for fine-tuning.
pub enum ModelInit {
    Pretrained(Encoder),
    Random(EncoderConfig),
}

/// Trains every weight of a backbone plus linear classifier. `Scratch` mode
/// ignores pre-trained weights and initialises at random from the encoder config.
pub fn finetune(init: ModelInit, splits: Splits<'_>, config: &ProbeConfig) -> Result<(ProbeResult, Classifier)> {
    config.validate()?;
    splits.validate()?;
    if config.mode == ProbeMode::Linear {
        return Err(Error::Config { key: "mode".into(), message: "linear mode uses linear_probe".into() });
    }
    let stack = compose_stack_sized(&config.stack, config.input_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(config.seed, "finetune"));
    let n_classes = splits.train.n_classes();
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed_str(config.seed, "finetune-init"));
    let mut model = match (init, config.mode) {
        (ModelInit::Pretrained(enc), ProbeMode::Finetune) => Classifier::from_encoder(enc, n_classes, &mut init_rng),
        (ModelInit::Pretrained(enc), _) => Classifier::random(&enc.config, n_classes, &mut init_rng)?,
        (ModelInit::Random(cfg), _) => Classifier::random(&cfg, n_classes, &mut init_rng)?,
    };
    let init_hash = weights_hash(&model);
    let mut opt = config.optimizer();
    let size = config.input_size;
    let model_cell = std::cell::RefCell::new(&mut model);
    let history = train_loop(
        config,
        &splits.train.labels,
        &mut rng,
        |idx, lr, rng| {
            let refs: Vec<&RgbImage> = idx.iter().map(|&i| &splits.train.images[i]).collect();
            let x = prepare(&refs, config.augment.then_some(&stack), size, rng)?;
            let labels: Vec<usize> = idx.iter().map(|&i| splits.train.labels[i]).collect();
            let mut model = model_cell.borrow_mut();
            zero_grads(&mut **model);
            let logits = model.forward(&x, true)?;
            let (loss, g) = softmax_cross_entropy(&logits, &labels)?;
            model.backward(&g)?;
            opt.step(&mut model.params_mut(), lr)?;
            Ok(loss)
        },
        || {
            let mut model = model_cell.borrow_mut();
            model.clear_cache();
            let val = splits.val.map(|v| evaluate(&mut model, v, size).map(|r| r.accuracy)).transpose()?;
            let test = if config.track_test_accuracy { Some(evaluate(&mut model, splits.test, size)?.accuracy) } else { None };
            Ok((val, test))
        },
    )?;
    let report = evaluate(&mut model, splits.test, size)?;
    Ok((ProbeResult { report, history, init_hash, frozen_hash: None }, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::Rng;

    /// Classes differ by a strong colour cue.
    fn colour_task(n: usize, seed: u64) -> LabeledImages {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let palette = [[200u8, 40, 40], [40, 200, 40], [40, 40, 200]];
        let mut ids = Vec::new();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 3;
            images.push(RgbImage::from_fn(12, 12, |_, _| {
                let j: i16 = rng.random_range(-20..=20);
                Rgb(palette[c].map(|v| (v as i16 + j).clamp(0, 255) as u8))
            }));
            labels.push(c);
            ids.push(format!("p{i}"));
        }
        LabeledImages::new(ids, images, labels, vec!["r".into(), "g".into(), "b".into()]).unwrap()
    }

    fn tiny_encoder() -> Encoder {
        let cfg = EncoderConfig { base_width: 4, projection_hidden: 8, projection_dim: 4, ..EncoderConfig::small_cnn() };
        Encoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn quick(mut c: ProbeConfig) -> ProbeConfig {
        c.input_size = 12;
        c.epochs = 5;
        c.batch_size = 16;
        c
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = Tensor::from_shape_vec(ndarray::IxDyn(&[2, 3]), vec![0.2, -1.0, 0.5, 1.5, 0.3, -0.2]).unwrap();
        let labels = [2, 0];
        let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
        for i in 0..6 {
            let mut p = logits.clone();
            let mut m = logits.clone();
            p.as_slice_mut().unwrap()[i] += 1e-3;
            m.as_slice_mut().unwrap()[i] -= 1e-3;
            let num = (softmax_cross_entropy(&p, &labels).unwrap().0 - softmax_cross_entropy(&m, &labels).unwrap().0) / 2e-3;
            assert!((num - g.as_slice().unwrap()[i] as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn linear_probe_keeps_encoder_frozen_and_learns_colour() {
        let train = colour_task(60, 1);
        let test = colour_task(30, 2);
        let mut enc = tiny_encoder();
        let before = weights_hash(&enc);
        let cfg = ProbeConfig { augment: false, epochs: 60, ..quick(ProbeConfig::linear()) };
        let r = linear_probe(&mut enc, Splits::new(&train, &test), &cfg).unwrap();
        assert_eq!(weights_hash(&enc), before);
        let (a, b) = r.frozen_hash.unwrap();
        assert_eq!(a, b);
        assert_eq!(r.history.len(), 60);
        assert!(r.report.accuracy > 0.9, "{}", r.report.accuracy);
    }

    #[test]
    fn label_set_mismatch_is_rejected() {
        let train = colour_task(12, 1);
        let mut test = colour_task(6, 2);
        test.class_names[2] = "other".into();
        let r = linear_probe(&mut tiny_encoder(), Splits::new(&train, &test), &quick(ProbeConfig::linear()));
        assert!(matches!(r, Err(Error::Manifest(_))));
    }

    #[test]
    fn scratch_ignores_pretrained_weights_and_finetune_uses_them() {
        let train = colour_task(30, 4);
        let test = colour_task(12, 5);
        let enc = tiny_encoder();
        let cfg = quick(ProbeConfig { epochs: 2, ..ProbeConfig::scratch() });
        let (from_pre, _) = finetune(ModelInit::Pretrained(enc.clone()), Splits::new(&train, &test), &cfg).unwrap();
        let (from_rand, _) = finetune(ModelInit::Random(enc.config.clone()), Splits::new(&train, &test), &cfg).unwrap();
        assert_eq!(from_pre.init_hash, from_rand.init_hash);
        assert_eq!(from_pre.report, from_rand.report);
        let ft = quick(ProbeConfig { epochs: 2, ..ProbeConfig::finetune_breast() });
        let (tuned, _) = finetune(ModelInit::Pretrained(enc), Splits::new(&train, &test), &ft).unwrap();
        assert_ne!(tuned.init_hash, from_rand.init_hash);
    }

    #[test]
    fn finetune_logs_validation_and_learning_curve() {
        let train = colour_task(30, 6);
        let val = colour_task(9, 7);
        let test = colour_task(9, 8);
        let cfg = quick(ProbeConfig { track_test_accuracy: true, ..ProbeConfig::finetune_skin() });
        let splits = Splits { train: &train, val: Some(&val), test: &test };
        let (r, _) = finetune(ModelInit::Pretrained(tiny_encoder()), splits, &cfg).unwrap();
        assert!(r.history.iter().all(|h| h.val_accuracy.is_some() && h.test_accuracy.is_some()));
        assert_eq!(r.report.accuracy, r.history.last().unwrap().test_accuracy.unwrap());
    }
}
