//! Encoder (backbone + projection head) and downstream classifier.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{Layer, Linear, Param, Relu, Sequential, Tensor};
use super::resnet::{resnet50, small_cnn};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Resnet50,
    SmallCnn,
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Resnet50 => "resnet50",
            Self::SmallCnn => "small_cnn",
        })
    }
}

impl FromStr for BackboneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet50" => Ok(Self::Resnet50),
            "small_cnn" => Ok(Self::SmallCnn),
            _ => Err(Error::InvalidArgument(format!("unknown backbone `{s}` (expected resnet50 or small_cnn)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub backbone: BackboneKind,
    pub projection_dim: usize,
    pub projection_hidden: usize,
    /// First-block channel count of `small_cnn`; ignored for resnet50.
    pub base_width: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { backbone: BackboneKind::Resnet50, projection_dim: 128, projection_hidden: 2048, base_width: 16 }
    }
}

impl EncoderConfig {
    pub fn small_cnn() -> Self {
        Self { backbone: BackboneKind::SmallCnn, projection_dim: 64, projection_hidden: 128, base_width: 16 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.projection_dim < 2 {
            return Err(Error::Config { key: "projection_dim".into(), message: "must be at least 2".into() });
        }
        if self.projection_hidden == 0 {
            return Err(Error::Config { key: "projection_hidden".into(), message: "must be positive".into() });
        }
        if self.base_width == 0 {
            return Err(Error::Config { key: "base_width".into(), message: "must be positive".into() });
        }
        Ok(())
    }

    pub(crate) fn build_backbone<R: Rng + ?Sized>(&self, rng: &mut R) -> (Sequential, usize) {
        match self.backbone {
            BackboneKind::Resnet50 => resnet50(rng),
            BackboneKind::SmallCnn => small_cnn(self.base_width, rng),
        }
    }
}

/// Backbone `f` followed by the projection head `g` (`Linear → ReLU → Linear`).
/// `forward` returns projections; [`Encoder::features`] returns backbone output.
#[derive(Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub backbone: Sequential,
    pub head: Sequential,
    feature_dim: usize,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (backbone, feature_dim) = config.build_backbone(rng);
        let head = Sequential::new()
            .with(Linear::new("head.0", feature_dim, config.projection_hidden, rng))
            .with(Relu::new())
            .with(Linear::new("head.2", config.projection_hidden, config.projection_dim, rng));
        Ok(Self { config, backbone, head, feature_dim })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Pooled backbone features in inference mode.
    pub fn features(&mut self, x: &Tensor) -> Result<Tensor> {
        self.backbone.forward(x, false)
    }
}

impl Layer for Encoder {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.backbone.forward(x, train)?;
        self.head.forward(&h, train)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.head.backward(grad)?;
        self.backbone.backward(&g)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.backbone.params_mut();
        v.extend(self.head.params_mut());
        v
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.backbone.params();
        v.extend(self.head.params());
        v
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = self.backbone.buffers_mut();
        v.extend(self.head.buffers_mut());
        v
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.backbone.buffers();
        v.extend(self.head.buffers());
        v
    }

    fn clear_cache(&mut self) {
        self.backbone.clear_cache();
        self.head.clear_cache();
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Backbone with a linear classification layer on pooled features.
#[derive(Clone)]
pub struct Classifier {
    pub backbone: Sequential,
    pub fc: Linear,
    feature_dim: usize,
}

impl Classifier {
    /// Reuses the backbone of a (pre-trained) encoder; the projection head is discarded.
    pub fn from_encoder<R: Rng + ?Sized>(encoder: Encoder, n_classes: usize, rng: &mut R) -> Self {
        let feature_dim = encoder.feature_dim;
        Self { backbone: encoder.backbone, fc: Linear::new("fc", feature_dim, n_classes, rng), feature_dim }
    }

    pub fn random<R: Rng + ?Sized>(config: &EncoderConfig, n_classes: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (backbone, feature_dim) = config.build_backbone(rng);
        Ok(Self { backbone, fc: Linear::new("fc", feature_dim, n_classes, rng), feature_dim })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }
}

impl Layer for Classifier {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.backbone.forward(x, train)?;
        self.fc.forward(&h, train)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.fc.backward(grad)?;
        self.backbone.backward(&g)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.backbone.params_mut();
        v.extend(self.fc.params_mut());
        v
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.backbone.params();
        v.extend(self.fc.params());
        v
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.backbone.buffers_mut()
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        self.backbone.buffers()
    }

    fn clear_cache(&mut self) {
        self.backbone.clear_cache();
        self.fc.clear_cache();
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// SHA-256 over parameter and buffer names and raw values.
pub fn weights_hash(layer: &dyn Layer) -> String {
    let mut h = Sha256::new();
    let mut feed = |name: &str, t: &Tensor| {
        h.update(name.as_bytes());
        for v in t.iter() {
            h.update(v.to_le_bytes());
        }
    };
    for p in layer.params() {
        feed(&p.name, &p.value);
    }
    for (name, t) in layer.buffers() {
        feed(&name, t);
    }
    hex::encode(h.finalize())
}

pub fn zero_grads(layer: &mut dyn Layer) {
    layer.params_mut().into_iter().for_each(|p| p.zero_grad());
}

pub fn parameter_count(layer: &dyn Layer) -> usize {
    layer.params().iter().map(|p| p.value.len()).sum()
}
