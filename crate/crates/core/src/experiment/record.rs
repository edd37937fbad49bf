//! Run directories and the record that ties a run's outputs together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, CONFIG_FILE};
use crate::contrastive::RunStatus;
use crate::{Error, Result};

pub const RECORD_FILE: &str = "record.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    /// Command that produced the run (`pretrain`, `probe`, `sweep`, ...).
    pub command: String,
    pub config: ExperimentConfig,
    pub status: RunStatus,
    /// Per-epoch JSON-lines metrics, when the run has them.
    pub metrics: Option<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    /// Command-specific summary numbers.
    pub summary: serde_json::Value,
    pub message: Option<String>,
}

impl RunRecord {
    pub fn new(run_id: impl Into<String>, command: impl Into<String>, config: ExperimentConfig) -> Self {
        Self {
            run_id: run_id.into(),
            command: command.into(),
            config,
            status: RunStatus::Completed,
            metrics: None,
            artifacts: Vec::new(),
            summary: serde_json::Value::Null,
            message: None,
        }
    }

    pub fn save(&self, run_dir: &Path) -> Result<PathBuf> {
        let path = run_dir.join(RECORD_FILE);
        let tmp = run_dir.join(format!("{RECORD_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RECORD_FILE);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
    }
}

/// Creates `out/run_id` and writes the resolved config into it.
///
/// An existing directory is an error unless `force`, which deletes it first.
pub fn create_run_dir(out: &Path, run_id: &str, config: &ExperimentConfig, force: bool) -> Result<PathBuf> {
    if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id == "." || run_id == ".." {
        return Err(Error::Config { key: "run_id".into(), message: format!("`{run_id}` is not a valid directory name") });
    }
    let dir = out.join(run_id);
    if dir.exists() {
        if !force {
            return Err(Error::RunExists(run_id.to_string()));
        }
        log::warn!("overwriting run {}", dir.display());
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::create_dir_all(&dir)?;
    config.save(&dir.join(CONFIG_FILE))?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rerun_without_force_is_an_error() {
        let out = tempfile::tempdir().unwrap();
        let c = ExperimentConfig::default();
        let dir = create_run_dir(out.path(), "r1", &c, false).unwrap();
        std::fs::write(dir.join("marker"), "x").unwrap();
        assert!(matches!(create_run_dir(out.path(), "r1", &c, false), Err(Error::RunExists(id)) if id == "r1"));
        assert!(dir.join("marker").exists());
        create_run_dir(out.path(), "r1", &c, true).unwrap();
        assert!(!dir.join("marker").exists());
        let persisted = ExperimentConfig::from_file(&dir.join(CONFIG_FILE)).unwrap();
        assert_eq!(persisted, c);
    }

    #[test]
    fn record_round_trip() {
        let out = tempfile::tempdir().unwrap();
        let mut r = RunRecord::new("r", "pretrain", ExperimentConfig::default());
        r.status = RunStatus::Diverged;
        r.artifacts.push("a/b.ckpt".into());
        r.summary = serde_json::json!({"final_loss": 1.5});
        r.save(out.path()).unwrap();
        assert_eq!(RunRecord::load(out.path()).unwrap(), r);
    }

    #[test]
    fn rejects_path_like_ids() {
        let out = tempfile::tempdir().unwrap();
        assert!(create_run_dir(out.path(), "../x", &ExperimentConfig::default(), false).is_err());
    }
}
