//! Downstream evaluation: linear probe, fine-tuning, training from scratch,
//! metrics and fold aggregation.

pub mod folds;
pub mod metrics;
pub mod probe;

pub use folds::{aggregate, aggregate_table, load_fold_manifests, run_fold_series, AggregateReport, FoldRun};
pub use metrics::{auc_midrank, compute_metrics, weighted_sample, weighted_sampler_weights, MetricsReport};
pub use probe::{
    evaluate, finetune, linear_probe, softmax_cross_entropy, EpochLog, LabeledImages, ModelInit, OptimizerKind, ProbeConfig,
    ProbeMode, ProbeResult, Splits,
};
