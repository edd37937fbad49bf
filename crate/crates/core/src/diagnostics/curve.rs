//! Linear-probe accuracy across pre-training checkpoints.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::contrastive::load_encoder;
use crate::eval::{linear_probe, ProbeConfig, Splits};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    /// Epoch-mean pre-training loss stored with the checkpoint.
    pub ssl_loss: f64,
    pub probe_accuracy: f64,
}

/// One linear probe per checkpoint with the same probe configuration and seed.
/// Missing checkpoint files are skipped with a warning.
pub fn checkpoint_curve(checkpoints: &[(usize, PathBuf)], splits: Splits<'_>, probe: &ProbeConfig) -> Result<Vec<CurveRow>> {
    let mut rows = Vec::with_capacity(checkpoints.len());
    for (epoch, path) in checkpoints {
        if !path.exists() {
            log::warn!("checkpoint for epoch {epoch} missing at {}; skipped", path.display());
            continue;
        }
        let (mut encoder, ck) = load_encoder(path)?;
        let ssl_loss = ck.metadata["loss"].as_f64().unwrap_or(f64::NAN);
        let result = linear_probe(&mut encoder, splits, probe)?;
        log::info!("epoch {epoch}: ssl loss {ssl_loss:.4}, probe accuracy {:.4}", result.report.accuracy);
        rows.push(CurveRow { epoch: *epoch, ssl_loss, probe_accuracy: result.report.accuracy });
    }
    Ok(rows)
}

pub fn curve_csv(rows: &[CurveRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| crate::Error::InvalidArgument(e.to_string()))?).expect("csv is utf-8"))
}
