//! End-to-end run of every command on a tiny synthetic corpus.

use std::path::Path;

use histoclr::contrastive::RunStatus;
use histoclr::eval::ProbeMode;
use histoclr::experiment::{
    curve_command, diagnose_command, evaluate_command, export_command, pretrain_command, sample, sweep_command, synth,
    ExperimentConfig,
};
use histoclr::Error;

const TINY: &str = r#"
slide_size = 320
unsupervised_slides = 3
train_slides = 3
test_slides = 2
patch_size = 32
max_per_slide = 20
train_per_class_cap = 20
val_per_class = 0
test_per_class = 10
subset_sizes = [1, 2]
folds = 2
backbone = "small_cnn"
base_width = 4
projection_dim = 16
projection_hidden = 32
input_size = 32
batch_size = 16
epochs = 2
lr = 0.3
checkpoint_epochs = [1, 2]
probe_epochs = 2
sweep_batch_sizes = [8, 16]
sweep_lrs = [0.3, 1e9]
fn_batches = 2
export_samples = 30
"#;

fn base(root: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml_str(TINY).unwrap();
    c.data_root = root.display().to_string();
    c.out_dir = root.join("runs").display().to_string();
    c
}

#[test]
fn every_command_runs_on_a_tiny_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = base(tmp.path());

    synth(&c, false).unwrap();
    assert!(matches!(synth(&c, false), Err(Error::RunExists(_))));
    c.slides = "runs/synth".into();
    sample(&c, false).unwrap();
    c.unsupervised_manifest = "runs/sample/unsupervised/manifest.csv".into();
    c.train_manifest = "runs/sample/supervised/train.csv".into();
    c.test_manifest = "runs/sample/supervised/test.csv".into();

    let pre = pretrain_command(&c, false, false, None).unwrap();
    assert_eq!(pre.status, RunStatus::Completed);
    c.checkpoint = "runs/pretrain/checkpoints/epoch_0002.ckpt".into();
    c.pretrain_run = "runs/pretrain".into();

    let probe = evaluate_command(&c, ProbeMode::Linear, false).unwrap();
    let acc = probe.summary["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let mut ft = c.clone();
    ft.run_id = "ft".into();
    evaluate_command(&ft, ProbeMode::Finetune, false).unwrap();

    let mut folds = c.clone();
    folds.run_id = "folds".into();
    folds.fold_manifests = vec!["runs/sample/folds/fold0_size2.csv".into(), "runs/sample/folds/fold1_size2.csv".into()];
    let agg = evaluate_command(&folds, ProbeMode::Linear, false).unwrap();
    assert!(agg.summary["std_accuracy"].as_f64().unwrap() >= 0.0);

    let diag = diagnose_command(&c, false).unwrap();
    assert!(diag.summary["n_pairs"].as_u64().unwrap() > 0);
    let curve = curve_command(&c, false).unwrap();
    assert_eq!(curve.summary.as_array().unwrap().len(), 2);
    export_command(&c, false).unwrap();
    assert!(tmp.path().join("runs/export/pca.png").exists());

    let (_, report) = sweep_command(&c, false, false).unwrap();
    assert_eq!(report.count(RunStatus::Completed) + report.count(RunStatus::Diverged), 4);
    assert_eq!(report.count(RunStatus::Diverged), 2);
    let table = std::fs::read_to_string(tmp.path().join("runs/sweep/sweep_table.csv")).unwrap();
    assert_eq!(table.matches("DNC").count(), 2);
}

#[test]
fn resume_of_a_stopped_run_finishes_it() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = base(tmp.path());
    c.unsupervised_slides = 2;
    c.train_slides = 0;
    c.test_slides = 0;
    c.epochs = 3;
    c.checkpoint_epochs = vec![3];
    synth(&c, false).unwrap();
    c.slides = "runs/synth".into();
    sample(&c, false).unwrap();
    c.unsupervised_manifest = "runs/sample/unsupervised/manifest.csv".into();

    let stopped = pretrain_command(&c, false, false, Some(1)).unwrap();
    assert_ne!(stopped.status, RunStatus::Completed);
    let done = pretrain_command(&c, false, true, None).unwrap();
    assert_eq!(done.status, RunStatus::Completed);
    assert_eq!(done.summary["epochs_run"].as_u64(), Some(3));
}

#[test]
fn missing_inputs_name_their_key() {
    let tmp = tempfile::tempdir().unwrap();
    let c = base(tmp.path());
    match sample(&c, false) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "slides"),
        other => panic!("expected a config error, got {other:?}"),
    }
}
