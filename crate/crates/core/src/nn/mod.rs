//! Minimal neural-network stack: layers with hand-written backward passes,
//! ResNet-50 and a desk-scale CNN, optimisers and checkpoints.

pub mod checkpoint;
pub mod conv;
pub mod layers;
pub mod model;
pub mod optim;
pub mod resnet;

pub use checkpoint::Checkpoint;
pub use conv::Conv2d;
pub use layers::{BatchNorm, GlobalAvgPool, Layer, Linear, MaxPool2d, Param, ParamKind, Relu, Sequential, Tensor};
pub use model::{parameter_count, weights_hash, zero_grads, BackboneKind, Classifier, Encoder, EncoderConfig};
pub use optim::{cosine_anneal, Adam, Lars, LarsParams, Optimizer, Sgd};
pub use resnet::{resnet50, small_cnn, Residual};

#[cfg(test)]
mod tests;
