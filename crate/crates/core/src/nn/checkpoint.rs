//! Versioned binary checkpoint container.
//!
//! Layout: `HCLRCKPT` magic, `u32` format version, `u64` header length, a JSON
//! header (tensor names/shapes, epoch, free-form metadata), then all tensors
//! as little-endian `f32` in header order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use super::layers::{Layer, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"HCLRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    /// What the checkpoint holds, e.g. `encoder` or `classifier`.
    pub kind: String,
    pub epoch: usize,
    pub tensors: Vec<TensorInfo>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub epoch: usize,
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: &str, epoch: usize) -> Self {
        Self { kind: kind.to_string(), epoch, metadata: serde_json::Value::Null, tensors: Vec::new() }
    }

    /// Snapshot of all parameters and buffers of `layer`.
    pub fn from_layer(kind: &str, epoch: usize, layer: &dyn Layer) -> Self {
        let mut ck = Self::new(kind, epoch);
        ck.tensors.extend(layer.params().into_iter().map(|p| (p.name.clone(), p.value.clone())));
        ck.tensors.extend(layer.buffers().into_iter().map(|(n, t)| (n, t.clone())));
        ck
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor_map(&self) -> HashMap<String, Tensor> {
        self.tensors.iter().cloned().collect()
    }

    /// Copies stored values into every parameter and buffer of `layer`.
    /// Each must be present with a matching shape; extra tensors are ignored.
    pub fn load_into(&self, layer: &mut dyn Layer) -> Result<()> {
        let map: HashMap<&str, &Tensor> = self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = map.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, model expects {shape:?}",
                    t.shape()
                )));
            }
            Ok((*t).clone())
        };
        for p in layer.params_mut() {
            p.value = fetch(&p.name, p.value.shape())?;
        }
        for (name, t) in layer.buffers_mut() {
            *t = fetch(&name, t.shape())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            version: FORMAT_VERSION,
            kind: self.kind.clone(),
            epoch: self.epoch,
            tensors: self.tensors.iter().map(|(n, t)| TensorInfo { name: n.clone(), shape: t.shape().to_vec() }).collect(),
            metadata: self.metadata.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(MAGIC)?;
            w.write_all(&FORMAT_VERSION.to_le_bytes())?;
            w.write_all(&(header.len() as u64).to_le_bytes())?;
            w.write_all(&header)?;
            for (_, t) in &self.tensors {
                for v in t.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Checkpoint(format!("{}: truncated file", path.display())))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut header = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut header)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in header.tensors {
            let n: usize = info.shape.iter().product();
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes)
                .map_err(|_| Error::Checkpoint(format!("{}: truncated payload at `{}`", path.display(), info.name)))?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            let t = Tensor::from_shape_vec(IxDyn(&info.shape), data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.push((info.name, t));
        }
        Ok(Self { kind: header.kind, epoch: header.epoch, metadata: header.metadata, tensors })
    }
}
