//! Repeated runs over slide-subset folds and aggregate tables.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::probe::{finetune, linear_probe, LabeledImages, ModelInit, ProbeConfig, ProbeMode, Splits};
use crate::data::load_manifest;
use crate::nn::Encoder;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldRun {
    pub fold: usize,
    pub seed: u64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub mode: ProbeMode,
    pub runs: Vec<FoldRun>,
    pub mean_accuracy: f64,
    /// Population standard deviation over runs.
    pub std_accuracy: f64,
    pub mean_auc: Option<f64>,
    pub std_auc: Option<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate(mode: ProbeMode, runs: Vec<FoldRun>) -> AggregateReport {
    let acc: Vec<f64> = runs.iter().map(|r| r.report.accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&acc);
    let aucs: Option<Vec<f64>> = runs.iter().map(|r| r.report.auc).collect();
    let (mean_auc, std_auc) = match aucs {
        Some(a) if !a.is_empty() => {
            let (m, s) = mean_std(&a);
            (Some(m), Some(s))
        }
        _ => (None, None),
    };
    AggregateReport { mode, runs, mean_accuracy, std_accuracy, mean_auc, std_auc }
}

impl Clone for ModelInit {
    fn clone(&self) -> Self {
        match self {
            Self::Pretrained(e) => Self::Pretrained(e.clone()),
            Self::Random(c) => Self::Random(c.clone()),
        }
    }
}

/// One run per fold; run `i` trains on `folds[i]` with seed `config.seed + i`
/// and is scored on the shared test set.
pub fn run_fold_series(init: &ModelInit, folds: &[LabeledImages], test: &LabeledImages, config: &ProbeConfig) -> Result<AggregateReport> {
    if folds.is_empty() {
        return Err(Error::InvalidArgument("no folds given".into()));
    }
    let mut runs = Vec::with_capacity(folds.len());
    for (fold, train) in folds.iter().enumerate() {
        let cfg = ProbeConfig { seed: config.seed + fold as u64, ..config.clone() };
        let splits = Splits::new(train, test);
        let result = match config.mode {
            ProbeMode::Linear => {
                let mut enc: Encoder = match init {
                    ModelInit::Pretrained(e) => e.clone(),
                    ModelInit::Random(c) => {
                        let mut rng = crate::rng::rng_for_str(cfg.seed, "random-encoder");
                        Encoder::new(c.clone(), &mut rng)?
                    }
                };
                linear_probe(&mut enc, splits, &cfg)?
            }
            _ => finetune(init.clone(), splits, &cfg)?.0,
        };
        log::info!("fold {fold}: accuracy {:.4}", result.report.accuracy);
        runs.push(FoldRun { fold, seed: cfg.seed, report: result.report });
    }
    Ok(aggregate(config.mode, runs))
}

/// Loads fold training manifests; a missing file is an error.
pub fn load_fold_manifests(paths: &[PathBuf]) -> Result<Vec<LabeledImages>> {
    paths
        .iter()
        .map(|p| {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
            LabeledImages::from_manifest(&load_manifest(p)?)
        })
        .collect()
}

/// Comma-separated table: one row per method, one column per subset size,
/// cells `mean ± std` in percent.
pub fn aggregate_table(rows: &[(String, Vec<(usize, AggregateReport)>)]) -> Result<String> {
    let sizes: BTreeSet<usize> = rows.iter().flat_map(|(_, c)| c.iter().map(|(s, _)| *s)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string()];
    header.extend(sizes.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (method, cells) in rows {
        let mut rec = vec![method.clone()];
        for s in &sizes {
            rec.push(match cells.iter().find(|(size, _)| size == s) {
                Some((_, a)) => format!("{:.2} ± {:.2}", 100.0 * a.mean_accuracy, 100.0 * a.std_accuracy),
                None => String::new(),
            });
        }
        w.write_record(&rec)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?)
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(acc: f64) -> MetricsReport {
        MetricsReport { accuracy: acc, per_class_accuracy: vec![], auc: None, confusion: vec![], n_test: 10 }
    }

    #[test]
    fn aggregate_is_arithmetic_mean() {
        let accs = [0.8, 0.9, 0.85, 0.7, 0.95];
        let runs = accs.iter().enumerate().map(|(i, &a)| FoldRun { fold: i, seed: i as u64, report: report(a) }).collect();
        let agg = aggregate(ProbeMode::Linear, runs);
        assert!((agg.mean_accuracy - accs.iter().sum::<f64>() / 5.0).abs() < 1e-15);
        let same = (0..5).map(|i| FoldRun { fold: i, seed: 0, report: report(0.5) }).collect();
        assert_eq!(aggregate(ProbeMode::Linear, same).std_accuracy, 0.0);
    }

    #[test]
    fn table_has_method_rows_and_size_columns() {
        let agg = |a| aggregate(ProbeMode::Finetune, vec![FoldRun { fold: 0, seed: 0, report: report(a) }]);
        let rows = vec![
            ("ImageNet".to_string(), vec![(10, agg(0.5)), (216, agg(0.9))]),
            ("SimCLR".to_string(), vec![(10, agg(0.6)), (20, agg(0.7))]),
        ];
        let t = aggregate_table(&rows).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "method,10,20,216");
        assert_eq!(lines[1], "ImageNet,50.00 ± 0.00,,90.00 ± 0.00");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn missing_fold_manifest_is_an_error() {
        let r = load_fold_manifests(&[PathBuf::from("/nonexistent/fold0.csv")]);
        assert!(matches!(r, Err(Error::MissingFile(_))));
    }
}
