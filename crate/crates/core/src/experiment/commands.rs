//! One function per CLI subcommand. Each creates its run directory, persists
//! the resolved config and finishes by writing a [`RunRecord`].

use std::path::{Path, PathBuf};

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::record::{create_run_dir, RunRecord, RECORD_FILE};
use super::sweep::{run_sweep, RunOutcome, SweepReport, SweepSpec};
use crate::augment::compose_stack_sized;
use crate::contrastive::{checkpoint_path, load_encoder, pretrain, PretrainOptions, RunStatus};
use crate::data::{
    build_supervised_dataset, build_unsupervised_dataset, generate_synthetic_slide, load_manifest, make_slide_subsets,
    open_slide_dir, subset_manifest, write_manifest, write_slide_dir, GridConfig, LabelMask, LabeledSlide, Manifest, Split,
    SupervisedConfig, SyntheticSlideSpec,
};
use crate::diagnostics::{
    checkpoint_curve, curve_csv, embedding_batches, export_embeddings, false_negative_stats, render_histogram, render_scatter,
    save_png, write_embeddings_csv, write_projection_csv, EmbeddingSource, Pca,
};
use crate::eval::{aggregate_table, finetune, linear_probe, load_fold_manifests, run_fold_series, LabeledImages, ModelInit, ProbeMode, Splits};
use crate::rng::derive_seed_str;
use crate::{Error, Result};

pub const SLIDE_INDEX: &str = "slides.json";
pub const LABELS_FILE: &str = "labels.png";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlideRole {
    Unsupervised,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideEntry {
    pub slide_id: String,
    pub role: SlideRole,
    /// Relative to the index file.
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideIndex {
    pub class_names: Vec<String>,
    /// Resolution of the label masks.
    pub labels_mpp: f64,
    pub slides: Vec<SlideEntry>,
}

fn run_id<'a>(config: &'a ExperimentConfig, command: &'a str) -> &'a str {
    if config.run_id.is_empty() {
        command
    } else {
        &config.run_id
    }
}

fn start(config: &ExperimentConfig, command: &str, force: bool) -> Result<(PathBuf, RunRecord)> {
    let id = run_id(config, command);
    let dir = create_run_dir(&config.out_dir(), id, config, force)?;
    Ok((dir, RunRecord::new(id, command, config.clone())))
}

fn save_labels(labels: &LabelMask, path: &Path) -> Result<()> {
    let img = GrayImage::from_fn(labels.width(), labels.height(), |x, y| image::Luma([labels.get(x, y)]));
    img.save(path)?;
    Ok(())
}

fn load_labels(path: &Path) -> Result<LabelMask> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?.to_luma8();
    LabelMask::new(img.width(), img.height(), img.into_raw())
}

/// `synth`: writes annotated synthetic slides and an index assigning each
/// slide to the unsupervised pool or a supervised split.
pub fn synth(config: &ExperimentConfig, force: bool) -> Result<RunRecord> {
    let (dir, mut record) = start(config, "synth", force)?;
    let mut spec = SyntheticSlideSpec::with_classes(config.slide_size, config.slide_size, config.n_classes);
    spec.mpp = config.mpp;
    spec.validate().map_err(|e| Error::Config { key: "slide_size".into(), message: e.to_string() })?;
    let roles = [
        (SlideRole::Unsupervised, "u", config.unsupervised_slides),
        (SlideRole::Train, "tr", config.train_slides),
        (SlideRole::Val, "va", config.val_slides),
        (SlideRole::Test, "te", config.test_slides),
    ];
    let mut entries = Vec::new();
    for (role, prefix, n) in roles {
        for i in 0..n {
            let id = format!("{prefix}{i:03}");
            let slide = generate_synthetic_slide(&spec, &id, derive_seed_str(config.seed, &id))?;
            let rel = format!("slides/{id}");
            write_slide_dir(&slide.slide, &dir.join(&rel))?;
            save_labels(&slide.labels, &dir.join(&rel).join(LABELS_FILE))?;
            entries.push(SlideEntry { slide_id: id, role, dir: rel });
        }
    }
    let index = SlideIndex { class_names: spec.classes.iter().map(|c| c.name.clone()).collect(), labels_mpp: spec.mpp, slides: entries };
    let index_path = dir.join(SLIDE_INDEX);
    std::fs::write(&index_path, serde_json::to_string_pretty(&index)?)?;
    log::info!("wrote {} slides to {}", index.slides.len(), dir.display());
    record.summary = serde_json::json!({ "slides": index.slides.len() });
    record.artifacts.push(index_path);
    record.save(&dir)?;
    Ok(record)
}

/// Paths written by [`sample`].
pub const UNSUPERVISED_MANIFEST: &str = "unsupervised/manifest.csv";
pub const SPLIT_MANIFESTS: [(Split, &str); 3] = [(Split::Train, "train.csv"), (Split::Val, "val.csv"), (Split::Test, "test.csv")];

/// `sample`: unsupervised and supervised patch datasets from a `synth`
/// directory, one manifest per split, plus nested fold manifests when
/// `subset_sizes` is set.
pub fn sample(config: &ExperimentConfig, force: bool) -> Result<RunRecord> {
    let slides_dir = config.required_path("slides")?;
    let index_path = slides_dir.join(SLIDE_INDEX);
    if !index_path.exists() {
        return Err(Error::MissingFile(index_path));
    }
    let index: SlideIndex = serde_json::from_reader(std::fs::File::open(&index_path)?)?;
    let (dir, mut record) = start(config, "sample", force)?;
    let grid = GridConfig { patch_size: config.patch_size, mpp: config.mpp, overlap_fraction: 0.0, ..GridConfig::default() };

    let mut unsup_slides = Vec::new();
    let mut labeled = Vec::new();
    for e in &index.slides {
        let slide = open_slide_dir(&slides_dir.join(&e.dir))?;
        match e.role {
            SlideRole::Unsupervised => unsup_slides.push(slide),
            role => {
                let split = match role {
                    SlideRole::Train => Split::Train,
                    SlideRole::Val => Split::Val,
                    _ => Split::Test,
                };
                let labels = load_labels(&slides_dir.join(&e.dir).join(LABELS_FILE))?;
                labeled.push((slide, labels, split));
            }
        }
    }

    let refs: Vec<&dyn crate::data::SlideSource> = unsup_slides.iter().map(|s| s as &dyn crate::data::SlideSource).collect();
    let unsup = build_unsupervised_dataset(&refs, &grid, config.max_per_slide, config.seed)?;
    let unsup_manifest = unsup.save(&dir.join("unsupervised"), "manifest.csv")?;
    record.artifacts.push(dir.join(UNSUPERVISED_MANIFEST));

    let mut summary = serde_json::json!({ "unsupervised": unsup_manifest.len() });
    if !labeled.is_empty() {
        let slides: Vec<LabeledSlide<'_>> = labeled
            .iter()
            .map(|(s, l, split)| LabeledSlide { slide: s, labels: l, labels_mpp: index.labels_mpp, split: *split })
            .collect();
        let sup_config = SupervisedConfig {
            grid: GridConfig { overlap_fraction: config.overlap_fraction, ..grid.clone() },
            train_per_class_cap: config.train_per_class_cap,
            val_per_class: config.val_per_class,
            test_per_class: config.test_per_class,
            min_class_fraction: config.min_class_fraction,
        };
        let sup = build_supervised_dataset(&slides, &index.class_names, &sup_config, config.seed)?;
        let all = sup.save(&dir.join("supervised"), "all.csv")?;
        for (split, name) in SPLIT_MANIFESTS {
            let m = all.split(split);
            if m.is_empty() {
                continue;
            }
            let path = dir.join("supervised").join(name);
            write_manifest(&path, &m)?;
            summary[split.as_str()] = serde_json::json!(m.len());
            record.artifacts.push(path);
        }
        if !config.subset_sizes.is_empty() {
            let train = all.split(Split::Train);
            let ids: Vec<String> = train.slide_ids().into_iter().collect();
            let folds = make_slide_subsets(&ids, &config.subset_sizes, config.folds, config.seed)
                .map_err(|e| Error::Config { key: "subset_sizes".into(), message: e.to_string() })?;
            std::fs::create_dir_all(dir.join("folds"))?;
            for f in &folds {
                for (size, slide_ids) in &f.subsets {
                    let path = dir.join("folds").join(format!("fold{}_size{size}.csv", f.fold));
                    write_manifest(&path, &subset_manifest(&train, slide_ids, f.fold))?;
                    record.artifacts.push(path);
                }
            }
            summary["folds"] = serde_json::json!(folds.len());
        }
    }
    log::info!("sampled {summary}");
    record.summary = summary;
    record.save(&dir)?;
    Ok(record)
}

fn manifest_images(path: &Path) -> Result<Vec<image::RgbImage>> {
    load_manifest(path)?.load_images()
}

fn labeled(path: &Path, split: Option<Split>) -> Result<LabeledImages> {
    let m: Manifest = load_manifest(path)?;
    let m = match split {
        Some(s) if m.records.iter().any(|r| r.split != s) => m.split(s),
        _ => m,
    };
    LabeledImages::from_manifest(&m)
}

/// `pretrain`: contrastive pre-training on the unsupervised manifest.
///
/// With `resume`, continues the run in `out/run_id` from its state file; a
/// completed run is left untouched.
pub fn pretrain_command(config: &ExperimentConfig, force: bool, resume: bool, stop_after_epoch: Option<usize>) -> Result<RunRecord> {
    let pretrain_config = config.pretrain_config()?;
    let manifest = config.required_path("unsupervised_manifest")?;
    let id = run_id(config, "pretrain").to_string();
    let dir = config.out_dir().join(&id);
    let mut record = if resume {
        let previous = RunRecord::load(&dir).map_err(|_| Error::Checkpoint(format!("no run to resume at {}", dir.display())))?;
        if previous.status == RunStatus::Completed {
            log::info!("run `{id}` already completed; nothing to do");
            return Ok(previous);
        }
        previous
    } else {
        start(config, "pretrain", force)?.1
    };
    let images = manifest_images(&manifest)?;
    log::info!("pre-training on {} patches", images.len());
    let outcome = pretrain(&pretrain_config, &images, &dir, &PretrainOptions { resume, stop_after_epoch })?;
    record.status = outcome.status;
    record.metrics = Some(outcome.metrics_path.clone());
    record.artifacts = outcome.checkpoints.iter().map(|(_, p)| p.clone()).collect();
    record.artifacts.push(outcome.state_path.clone());
    record.message = outcome.divergence.clone();
    record.summary = serde_json::json!({
        "epochs_run": outcome.history.len(),
        "final_loss": outcome.history.last().map(|m| m.loss),
    });
    record.save(&dir)?;
    Ok(record)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// `probe` (linear) and `finetune` (fine-tuning or from-scratch training).
///
/// With `fold_manifests` set, trains once per fold manifest and reports the
/// mean and standard deviation; otherwise trains on `train_manifest`.
pub fn evaluate_command(config: &ExperimentConfig, mode: ProbeMode, force: bool) -> Result<RunRecord> {
    let command = if mode == ProbeMode::Linear { "probe" } else { "finetune" };
    let probe = config.probe_config(mode)?;
    let test = labeled(&config.required_path("test_manifest")?, Some(Split::Test))?;
    let init = match mode {
        ProbeMode::Scratch => ModelInit::Random(config.encoder_config()?),
        _ => ModelInit::Pretrained(load_encoder(&config.required_path("checkpoint")?)?.0),
    };
    let (dir, mut record) = start(config, command, force)?;
    if !config.fold_manifests.is_empty() {
        let folds = load_fold_manifests(&config.fold_manifest_paths())?;
        let report = run_fold_series(&init, &folds, &test, &probe)?;
        let table = aggregate_table(&[(config.mode.clone(), vec![(folds.len(), report.clone())])])?;
        std::fs::write(dir.join("aggregate.json"), serde_json::to_string_pretty(&report)?)?;
        std::fs::write(dir.join("aggregate.csv"), table)?;
        record.artifacts.extend([dir.join("aggregate.json"), dir.join("aggregate.csv")]);
        record.summary = serde_json::json!({ "mean_accuracy": report.mean_accuracy, "std_accuracy": report.std_accuracy });
    } else {
        let train = labeled(&config.required_path("train_manifest")?, Some(Split::Train))?;
        let val = match config.optional_path("val_manifest")? {
            Some(p) => Some(labeled(&p, Some(Split::Val))?),
            None => None,
        };
        let splits = Splits { train: &train, val: val.as_ref(), test: &test };
        let result = match (mode, init) {
            (ProbeMode::Linear, ModelInit::Pretrained(mut encoder)) => linear_probe(&mut encoder, splits, &probe)?,
            (_, init) => finetune(init, splits, &probe)?.0,
        };
        let metrics = dir.join("metrics.jsonl");
        write_jsonl(&metrics, &result.history)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&result)?)?;
        record.metrics = Some(metrics);
        record.artifacts.push(dir.join("report.json"));
        record.summary = serde_json::json!({ "accuracy": result.report.accuracy, "auc": result.report.auc });
        log::info!("{command}: test accuracy {:.4}", result.report.accuracy);
    }
    record.save(&dir)?;
    Ok(record)
}

/// Default sweep executor: pre-train, then linear-probe the final encoder when
/// train and test manifests are configured and `sweep_probe` is set. The cell
/// value is the probe accuracy, or the final loss without a probe.
pub fn pretrain_and_probe(config: &ExperimentConfig, run_dir: &Path) -> Result<RunOutcome> {
    let images = manifest_images(&config.required_path("unsupervised_manifest")?)?;
    let outcome = pretrain(&config.pretrain_config()?, &images, run_dir, &PretrainOptions::default())?;
    let mut result = RunOutcome {
        status: outcome.status,
        metric: outcome.history.last().map(|m| m.loss),
        metrics_path: Some(outcome.metrics_path.clone()),
        artifacts: outcome.checkpoints.iter().map(|(_, p)| p.clone()).collect(),
        message: outcome.divergence.clone(),
    };
    if outcome.status != RunStatus::Completed {
        result.metric = Some(f64::NAN);
        return Ok(result);
    }
    if config.sweep_probe && !config.train_manifest.is_empty() && !config.test_manifest.is_empty() {
        let train = labeled(&config.required_path("train_manifest")?, Some(Split::Train))?;
        let test = labeled(&config.required_path("test_manifest")?, Some(Split::Test))?;
        let last = checkpoint_path(run_dir, config.epochs);
        let (mut encoder, _) = load_encoder(&last)?;
        let probe = linear_probe(&mut encoder, Splits::new(&train, &test), &config.probe_config(ProbeMode::Linear)?)?;
        result.metric = Some(probe.report.accuracy);
    }
    Ok(result)
}

/// `sweep`: the grid from the config's `sweep_*` keys, run with
/// [`pretrain_and_probe`]. Rerunning the same sweep directory with `resume`
/// skips runs already in its journal.
pub fn sweep_command(config: &ExperimentConfig, force: bool, resume: bool) -> Result<(RunRecord, SweepReport)> {
    config.required_path("unsupervised_manifest")?;
    let spec = SweepSpec::from_config(config);
    let id = run_id(config, "sweep").to_string();
    let dir = config.out_dir().join(&id);
    let mut record = if resume && dir.join(RECORD_FILE).exists() {
        RunRecord::load(&dir)?
    } else {
        start(config, "sweep", force)?.1
    };
    // The final epoch is always checkpointed so the executor can probe it.
    let mut base = config.clone();
    base.checkpoint_epochs.push(config.epochs);
    let report = run_sweep(&spec, &base, &dir, config.parallelism, pretrain_and_probe)?;
    record.artifacts = vec![report.journal.clone(), dir.join(super::sweep::TABLE_FILE)];
    record.summary = serde_json::json!({
        "runs": report.runs.len(),
        "diverged": report.count(RunStatus::Diverged),
        "failed": report.count(RunStatus::Failed),
    });
    record.save(&dir)?;
    Ok((record, report))
}

/// `diagnose`: anchor–negative cosine similarity histogram and the fraction
/// above each threshold, on random batches of the unsupervised data.
pub fn diagnose_command(config: &ExperimentConfig, force: bool) -> Result<RunRecord> {
    let (mut encoder, _) = load_encoder(&config.required_path("checkpoint")?)?;
    let images = manifest_images(&config.required_path("unsupervised_manifest")?)?;
    let stack = compose_stack_sized(&config.stack, config.input_size)?;
    let source = if config.fn_source == "backbone" { EmbeddingSource::Backbone } else { EmbeddingSource::Projection };
    let pairs = config.batch_size.min(images.len());
    let (dir, mut record) = start(config, "diagnose", force)?;
    let batches = embedding_batches(&mut encoder, &images, &stack, pairs, config.fn_batches, source, config.temperature, config.seed)?;
    let stats = false_negative_stats(&batches, &config.fn_thresholds)?;
    std::fs::write(dir.join("similarity.json"), serde_json::to_string_pretty(&stats)?)?;
    save_png(&render_histogram(&stats.histogram, 400, 200), &dir.join("similarity_histogram.png"))?;
    record.artifacts.extend([dir.join("similarity.json"), dir.join("similarity_histogram.png")]);
    record.summary = serde_json::json!({ "n_pairs": stats.n_pairs, "fraction_above": stats.fraction_above });
    record.save(&dir)?;
    Ok(record)
}

/// `curve`: linear probe of every checkpoint of a pre-training run, with the
/// SSL loss stored in each checkpoint.
pub fn curve_command(config: &ExperimentConfig, force: bool) -> Result<RunRecord> {
    let run = config.required_path("pretrain_run")?;
    let train = labeled(&config.required_path("train_manifest")?, Some(Split::Train))?;
    let test = labeled(&config.required_path("test_manifest")?, Some(Split::Test))?;
    let checkpoints: Vec<(usize, PathBuf)> = config.checkpoint_epochs.iter().map(|&e| (e, checkpoint_path(&run, e))).collect();
    let (dir, mut record) = start(config, "curve", force)?;
    let rows = checkpoint_curve(&checkpoints, Splits::new(&train, &test), &config.probe_config(ProbeMode::Linear)?)?;
    std::fs::write(dir.join("curve.csv"), curve_csv(&rows)?)?;
    record.artifacts.push(dir.join("curve.csv"));
    record.summary = serde_json::to_value(&rows)?;
    record.save(&dir)?;
    Ok(record)
}

/// `export`: backbone embeddings of a class-balanced sample of the test set,
/// their two-component PCA projection and a scatter plot.
pub fn export_command(config: &ExperimentConfig, force: bool) -> Result<RunRecord> {
    let (mut encoder, _) = load_encoder(&config.required_path("checkpoint")?)?;
    let data = labeled(&config.required_path("test_manifest")?, None)?;
    let (dir, mut record) = start(config, "export", force)?;
    let export = export_embeddings(&mut encoder, &data, config.export_samples, config.seed, config.input_size)?;
    write_embeddings_csv(&dir.join("embeddings.csv"), &export)?;
    let pca = Pca::fit(&export.features, 2)?;
    let projected = pca.transform(&export.features);
    write_projection_csv(&dir.join("pca.csv"), &export, &projected)?;
    save_png(&render_scatter(&projected, &export.labels, 400), &dir.join("pca.png"))?;
    record.artifacts.extend([dir.join("embeddings.csv"), dir.join("pca.csv"), dir.join("pca.png")]);
    record.summary = serde_json::json!({ "samples": export.labels.len(), "explained_variance": pca.explained_variance.to_vec() });
    record.save(&dir)?;
    Ok(record)
}
