//! Flat TOML experiment configuration.
//!
//! Every key has a default, so a file only needs the keys it changes. Parsing
//! names the offending key on every error.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::compose_stack_sized;
use crate::contrastive::PretrainConfig;
use crate::eval::{OptimizerKind, ProbeConfig, ProbeMode};
use crate::nn::{BackboneKind, EncoderConfig};
use crate::{Error, Result};

/// Environment variable consulted for relative data paths when `data_root` is empty.
pub const DATA_ROOT_ENV: &str = "HISTOCLR_DATA_ROOT";

/// Name of the resolved config persisted beside every run's outputs.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    // Paths. Empty strings mean "not set".
    pub data_root: String,
    pub unsupervised_manifest: String,
    pub train_manifest: String,
    pub val_manifest: String,
    pub test_manifest: String,
    pub fold_manifests: Vec<String>,
    /// Encoder checkpoint for probe, finetune, diagnose and export.
    pub checkpoint: String,
    /// Pre-training run directory read by `curve`.
    pub pretrain_run: String,
    /// Directory written by `synth`, read by `sample`.
    pub slides: String,
    pub out_dir: String,
    /// Empty: the command name is used.
    pub run_id: String,
    pub seed: u64,

    // Synthetic slides and patch sampling.
    pub n_classes: usize,
    pub slide_size: u32,
    pub unsupervised_slides: usize,
    pub train_slides: usize,
    pub val_slides: usize,
    pub test_slides: usize,
    pub patch_size: u32,
    pub mpp: f64,
    pub max_per_slide: usize,
    pub overlap_fraction: f64,
    pub train_per_class_cap: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub min_class_fraction: f64,
    /// Nested slide-subset sizes; empty disables fold manifests.
    pub subset_sizes: Vec<usize>,
    pub folds: usize,

    // Encoder.
    pub backbone: String,
    pub base_width: usize,
    pub projection_dim: usize,
    pub projection_hidden: usize,

    // Pre-training.
    pub stack: String,
    pub input_size: u32,
    pub batch_size: usize,
    /// 0 disables gradient accumulation.
    pub micro_batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub temperature: f64,
    pub weight_decay: f64,
    pub trust_coefficient: f64,
    pub momentum: f64,
    /// Values above `epochs` are ignored.
    pub checkpoint_epochs: Vec<usize>,
    pub divergence_factor: f64,

    // Downstream evaluation. Zero-valued numeric overrides keep the preset.
    pub mode: String,
    /// `breast` (Adam) or `skin` (SGD with Nesterov momentum) fine-tuning recipe.
    pub recipe: String,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_batch_size: usize,
    pub probe_stack: String,
    pub probe_augment: bool,

    // Sweeps.
    /// `batch_lr` or `temperature`.
    pub sweep_axis: String,
    pub sweep_batch_sizes: Vec<usize>,
    pub sweep_lrs: Vec<f64>,
    pub sweep_temperatures: Vec<f64>,
    /// Replace the lr axis with lr = 0.3 * batch / 256.
    pub sweep_derived_lr: bool,
    /// Probe every sweep run when train and test manifests are set.
    pub sweep_probe: bool,
    pub parallelism: usize,

    // Diagnostics.
    pub fn_thresholds: Vec<f64>,
    pub fn_batches: usize,
    /// `projection` or `backbone`.
    pub fn_source: String,
    pub export_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = PretrainConfig::default();
        let probe = ProbeConfig::linear();
        Self {
            data_root: String::new(),
            unsupervised_manifest: String::new(),
            train_manifest: String::new(),
            val_manifest: String::new(),
            test_manifest: String::new(),
            fold_manifests: Vec::new(),
            checkpoint: String::new(),
            pretrain_run: String::new(),
            slides: String::new(),
            out_dir: "runs".into(),
            run_id: String::new(),
            seed: 0,

            n_classes: 3,
            slide_size: 2048,
            unsupervised_slides: 20,
            train_slides: 6,
            val_slides: 0,
            test_slides: 4,
            patch_size: 256,
            mpp: 0.5,
            max_per_slide: 1000,
            overlap_fraction: 0.0,
            train_per_class_cap: 75_000,
            val_per_class: 700,
            test_per_class: 3_700,
            min_class_fraction: 0.5,
            subset_sizes: Vec::new(),
            folds: 5,

            backbone: BackboneKind::Resnet50.to_string(),
            base_width: p.encoder.base_width,
            projection_dim: p.encoder.projection_dim,
            projection_hidden: p.encoder.projection_hidden,

            stack: p.stack,
            input_size: p.input_size,
            batch_size: p.batch_size,
            micro_batch: 0,
            epochs: p.epochs,
            lr: p.base_lr,
            temperature: p.temperature,
            weight_decay: p.weight_decay,
            trust_coefficient: p.trust_coefficient,
            momentum: p.momentum,
            checkpoint_epochs: p.checkpoint_epochs.into_iter().collect(),
            divergence_factor: p.divergence_factor,

            mode: "linear".into(),
            recipe: "breast".into(),
            probe_epochs: 0,
            probe_lr: 0.0,
            probe_batch_size: probe.batch_size,
            probe_stack: probe.stack,
            probe_augment: true,

            sweep_axis: "batch_lr".into(),
            sweep_batch_sizes: vec![256, 512, 1024, 2048],
            sweep_lrs: vec![0.3, 0.6, 1.2, 2.4],
            sweep_temperatures: vec![0.05, 0.1, 0.3, 0.5, 1.0],
            sweep_derived_lr: false,
            sweep_probe: true,
            parallelism: 1,

            fn_thresholds: vec![0.9],
            fn_batches: 10,
            fn_source: "projection".into(),
            export_samples: crate::diagnostics::DEFAULT_EXPORT_SAMPLES,
        }
    }
}

fn bad<T>(key: &str, message: impl Into<String>) -> Result<T> {
    Err(Error::Config { key: key.into(), message: message.into() })
}

fn kind_name(v: &toml::Value) -> &'static str {
    v.type_str()
}

/// Integers are accepted where the default is a float, element-wise for arrays.
fn coerce(expected: &toml::Value, given: toml::Value) -> toml::Value {
    match (expected, given) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (toml::Value::Array(e), toml::Value::Array(g)) if matches!(e.first(), Some(toml::Value::Float(_))) => {
            toml::Value::Array(g.into_iter().map(|x| coerce(&e[0], x)).collect())
        }
        (_, g) => g,
    }
}

impl ExperimentConfig {
    /// Parses a TOML document. Unset keys take their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let given: toml::Table =
            text.parse().map_err(|e: toml::de::Error| Error::Config { key: error_key(&e), message: e.message().to_string() })?;
        let defaults = toml::Table::try_from(Self::default()).map_err(|e| Error::Config { key: "<defaults>".into(), message: e.to_string() })?;
        let mut merged = defaults.clone();
        for (key, value) in given {
            let Some(expected) = defaults.get(&key) else {
                return bad(&key, "unknown key");
            };
            let value = coerce(expected, value);
            if kind_name(expected) != kind_name(&value) {
                return bad(&key, format!("expected {}, found {}", kind_name(expected), kind_name(&value)));
            }
            // Element types and ranges (e.g. negative integers for unsigned keys).
            let mut probe = defaults.clone();
            probe.insert(key.clone(), value.clone());
            if let Err(e) = toml::Value::Table(probe).try_into::<Self>() {
                return bad(&key, e.to_string().trim().to_string());
            }
            merged.insert(key, value);
        }
        let config: Self = toml::Value::Table(merged).try_into().map_err(|e| Error::Config { key: "<document>".into(), message: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config { key: "<document>".into(), message: e.to_string() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", format!("must be positive, got {}", self.temperature));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.micro_batch > 0 && self.batch_size % self.micro_batch != 0 {
            return bad("micro_batch", "must divide batch_size");
        }
        if self.checkpoint_epochs.contains(&0) {
            return bad("checkpoint_epochs", "epochs are counted from 1");
        }
        if self.n_classes < 2 {
            return bad("n_classes", "need at least two classes");
        }
        if self.patch_size == 0 {
            return bad("patch_size", "must be positive");
        }
        if !(self.mpp > 0.0) {
            return bad("mpp", "must be positive");
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return bad("overlap_fraction", "must lie in [0, 1)");
        }
        if self.max_per_slide == 0 {
            return bad("max_per_slide", "must be positive");
        }
        if self.parallelism == 0 {
            return bad("parallelism", "must be positive");
        }
        if self.probe_lr < 0.0 {
            return bad("probe_lr", "must be non-negative");
        }
        if self.fn_thresholds.iter().any(|t| !(-1.0..=1.0).contains(t)) {
            return bad("fn_thresholds", "thresholds are cosine similarities in [-1, 1]");
        }
        self.backbone_kind()?;
        self.probe_mode()?;
        self.probe_optimizer()?;
        if !matches!(self.sweep_axis.as_str(), "batch_lr" | "temperature") {
            return bad("sweep_axis", format!("expected `batch_lr` or `temperature`, got `{}`", self.sweep_axis));
        }
        if !matches!(self.fn_source.as_str(), "projection" | "backbone") {
            return bad("fn_source", format!("expected `projection` or `backbone`, got `{}`", self.fn_source));
        }
        compose_stack_sized(&self.stack, self.input_size).map_err(|e| Error::Config { key: "stack".into(), message: e.to_string() })?;
        compose_stack_sized(&self.probe_stack, self.input_size)
            .map_err(|e| Error::Config { key: "probe_stack".into(), message: e.to_string() })?;
        Ok(())
    }

    fn backbone_kind(&self) -> Result<BackboneKind> {
        self.backbone.parse().map_err(|_| Error::Config { key: "backbone".into(), message: format!("unknown backbone `{}`", self.backbone) })
    }

    pub fn probe_mode(&self) -> Result<ProbeMode> {
        match self.mode.as_str() {
            "linear" => Ok(ProbeMode::Linear),
            "finetune" => Ok(ProbeMode::Finetune),
            "scratch" => Ok(ProbeMode::Scratch),
            other => bad("mode", format!("expected linear, finetune or scratch, got `{other}`")),
        }
    }

    fn probe_optimizer(&self) -> Result<OptimizerKind> {
        match self.recipe.as_str() {
            "breast" => Ok(OptimizerKind::Adam),
            "skin" => Ok(OptimizerKind::SgdNesterov),
            other => bad("recipe", format!("expected breast or skin, got `{other}`")),
        }
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        let c = EncoderConfig {
            backbone: self.backbone_kind()?,
            projection_dim: self.projection_dim,
            projection_hidden: self.projection_hidden,
            base_width: self.base_width,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig> {
        let checkpoint_epochs: BTreeSet<usize> = self.checkpoint_epochs.iter().copied().filter(|&e| e <= self.epochs).collect();
        let c = PretrainConfig {
            batch_size: self.batch_size,
            micro_batch: (self.micro_batch > 0).then_some(self.micro_batch),
            epochs: self.epochs,
            base_lr: self.lr,
            temperature: self.temperature,
            weight_decay: self.weight_decay,
            trust_coefficient: self.trust_coefficient,
            momentum: self.momentum,
            stack: self.stack.clone(),
            input_size: self.input_size,
            seed: self.seed,
            checkpoint_epochs,
            encoder: self.encoder_config()?,
            divergence_factor: self.divergence_factor,
        };
        c.validate()?;
        Ok(c)
    }

    /// Probe configuration for `mode` (linear, finetune or scratch).
    pub fn probe_config(&self, mode: ProbeMode) -> Result<ProbeConfig> {
        let mut c = match (mode, self.probe_optimizer()?) {
            (ProbeMode::Linear, _) => ProbeConfig::linear(),
            (ProbeMode::Finetune, OptimizerKind::Adam) => ProbeConfig::finetune_breast(),
            (ProbeMode::Finetune, OptimizerKind::SgdNesterov) => ProbeConfig::finetune_skin(),
            (ProbeMode::Scratch, _) => ProbeConfig::scratch(),
        };
        if self.probe_epochs > 0 {
            c.epochs = self.probe_epochs;
        }
        if self.probe_lr > 0.0 {
            c.initial_lr = self.probe_lr;
        }
        c.batch_size = self.probe_batch_size;
        c.stack = self.probe_stack.clone();
        c.input_size = self.input_size;
        c.augment = self.probe_augment;
        c.seed = self.seed;
        c.validate()?;
        Ok(c)
    }

    /// Directory relative paths are resolved against: `data_root`, else the
    /// data-root environment variable, else the working directory.
    pub fn data_root(&self) -> PathBuf {
        if !self.data_root.is_empty() {
            return PathBuf::from(&self.data_root);
        }
        std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_root().join(p)
        }
    }

    /// Resolves a required path-valued key and checks that it exists.
    pub fn required_path(&self, key: &str) -> Result<PathBuf> {
        let value = match key {
            "unsupervised_manifest" => &self.unsupervised_manifest,
            "train_manifest" => &self.train_manifest,
            "val_manifest" => &self.val_manifest,
            "test_manifest" => &self.test_manifest,
            "checkpoint" => &self.checkpoint,
            "pretrain_run" => &self.pretrain_run,
            "slides" => &self.slides,
            _ => return bad(key, "not a path key"),
        };
        if value.is_empty() {
            return bad(key, "required path is not set");
        }
        let path = self.resolve(value);
        if !path.exists() {
            return bad(key, format!("path does not exist: {}", path.display()));
        }
        Ok(path)
    }

    /// Like [`required_path`](Self::required_path) but `None` when unset.
    pub fn optional_path(&self, key: &str) -> Result<Option<PathBuf>> {
        let unset = match key {
            "val_manifest" => self.val_manifest.is_empty(),
            "train_manifest" => self.train_manifest.is_empty(),
            "test_manifest" => self.test_manifest.is_empty(),
            "checkpoint" => self.checkpoint.is_empty(),
            _ => false,
        };
        if unset {
            Ok(None)
        } else {
            self.required_path(key).map(Some)
        }
    }

    pub fn fold_manifest_paths(&self) -> Vec<PathBuf> {
        self.fold_manifests.iter().map(|p| self.resolve(p)).collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }
}

fn error_key(e: &toml::de::Error) -> String {
    // Syntax errors carry no key; report the byte offset instead.
    match e.span() {
        Some(span) => format!("<syntax at byte {}>", span.start),
        None => "<syntax>".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_recipe_defaults() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.temperature, 0.5);
        assert_eq!(c.batch_size, 1024);
        assert_eq!(c.epochs, 200);
        assert_eq!(c.lr, 1.2);
        assert_eq!(c.stack, "base_scale");
    }

    fn key_of(r: Result<ExperimentConfig>) -> String {
        match r {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn negative_temperature_names_the_key() {
        assert_eq!(key_of(ExperimentConfig::from_toml_str("temperature = -1")), "temperature");
        assert_eq!(key_of(ExperimentConfig::from_toml_str("temperature = 0.0")), "temperature");
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert_eq!(key_of(ExperimentConfig::from_toml_str("temprature = 0.1")), "temprature");
    }

    #[test]
    fn type_mismatch_names_the_key() {
        assert_eq!(key_of(ExperimentConfig::from_toml_str("batch_size = \"big\"")), "batch_size");
        assert_eq!(key_of(ExperimentConfig::from_toml_str("batch_size = -4")), "batch_size");
        assert_eq!(key_of(ExperimentConfig::from_toml_str("sweep_lrs = [\"a\"]")), "sweep_lrs");
        assert_eq!(key_of(ExperimentConfig::from_toml_str("stack = \"nope\"")), "stack");
    }

    #[test]
    fn integers_are_accepted_for_floats() {
        let c = ExperimentConfig::from_toml_str("temperature = 1\nsweep_lrs = [1, 2.5]").unwrap();
        assert_eq!(c.temperature, 1.0);
        assert_eq!(c.sweep_lrs, vec![1.0, 2.5]);
    }

    #[test]
    fn round_trip() {
        let c = ExperimentConfig::from_toml_str("batch_size = 256\nepochs = 20\nlr = 0.3\nfold_manifests = [\"a.csv\"]\ncheckpoint_epochs = [5, 10]").unwrap();
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn missing_required_path_names_the_key() {
        let c = ExperimentConfig::default();
        assert_eq!(key_of(c.required_path("train_manifest").map(|_| c.clone())), "train_manifest");
        let c = ExperimentConfig { train_manifest: "/definitely/not/here.csv".into(), ..ExperimentConfig::default() };
        assert_eq!(key_of(c.required_path("train_manifest").map(|_| c.clone())), "train_manifest");
    }

    #[test]
    fn checkpoints_beyond_the_last_epoch_are_dropped() {
        let c = ExperimentConfig::from_toml_str("epochs = 20").unwrap();
        let p = c.pretrain_config().unwrap();
        assert_eq!(p.checkpoint_epochs.into_iter().collect::<Vec<_>>(), vec![10, 20]);
    }

    #[test]
    fn probe_presets_follow_recipe() {
        let c = ExperimentConfig::from_toml_str("recipe = \"skin\"").unwrap();
        assert_eq!(c.probe_config(ProbeMode::Finetune).unwrap().optimizer, OptimizerKind::SgdNesterov);
        let c = ExperimentConfig::from_toml_str("probe_epochs = 3").unwrap();
        assert_eq!(c.probe_config(ProbeMode::Linear).unwrap().epochs, 3);
    }

    #[test]
    fn relative_paths_use_data_root() {
        let c = ExperimentConfig { data_root: "/data".into(), ..ExperimentConfig::default() };
        assert_eq!(c.resolve("x/m.csv"), PathBuf::from("/data/x/m.csv"));
        assert_eq!(c.resolve("/abs.csv"), PathBuf::from("/abs.csv"));
    }
}
