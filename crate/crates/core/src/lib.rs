//! Contrastive self-supervised pre-training and evaluation for patch-based
//! histopathology.

pub mod augment;
pub mod contrastive;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod eval;
pub mod imaging;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
