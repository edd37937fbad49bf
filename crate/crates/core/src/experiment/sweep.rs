//! Cartesian hyper-parameter sweeps with an on-disk journal.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::record::{create_run_dir, RunRecord};
use crate::contrastive::RunStatus;
use crate::{Error, Result};

pub const JOURNAL_FILE: &str = "sweep_journal.jsonl";
pub const TABLE_FILE: &str = "sweep_table.csv";

/// Learning rate of the linear scaling rule.
pub fn derived_lr(batch_size: usize) -> f64 {
    0.3 * batch_size as f64 / 256.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    /// A numeric config key: `batch_size`, `lr`, `temperature`, `epochs` or `seed`.
    pub name: String,
    pub values: Vec<f64>,
}

impl SweepAxis {
    pub fn new(name: &str, values: impl IntoIterator<Item = f64>) -> Self {
        Self { name: name.into(), values: values.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axes: Vec<SweepAxis>,
    /// Adds `lr = 0.3 * batch_size / 256` to every point; needs a batch axis and no lr axis.
    pub derived_lr: bool,
}

impl SweepSpec {
    pub fn batch_lr(batches: &[usize], lrs: &[f64]) -> Self {
        Self {
            axes: vec![
                SweepAxis::new("batch_size", batches.iter().map(|&b| b as f64)),
                SweepAxis::new("lr", lrs.iter().copied()),
            ],
            derived_lr: false,
        }
    }

    pub fn derived(batches: &[usize]) -> Self {
        Self { axes: vec![SweepAxis::new("batch_size", batches.iter().map(|&b| b as f64))], derived_lr: true }
    }

    pub fn temperature(taus: &[f64]) -> Self {
        Self { axes: vec![SweepAxis::new("temperature", taus.iter().copied())], derived_lr: false }
    }

    /// The spec described by a config's `sweep_*` keys.
    pub fn from_config(c: &ExperimentConfig) -> Self {
        match c.sweep_axis.as_str() {
            "temperature" => Self::temperature(&c.sweep_temperatures),
            _ if c.sweep_derived_lr => Self::derived(&c.sweep_batch_sizes),
            _ => Self::batch_lr(&c.sweep_batch_sizes, &c.sweep_lrs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub values: BTreeMap<String, f64>,
}

impl SweepPoint {
    pub fn run_id(&self) -> String {
        let parts: Vec<String> = self.values.iter().map(|(k, v)| format!("{k}{v}")).collect();
        format!("run{:03}_{}", self.index, parts.join("_"))
    }
}

const SWEEPABLE: [&str; 5] = ["batch_size", "lr", "temperature", "epochs", "seed"];

/// Expands the full Cartesian grid, first axis slowest.
pub fn expand_grid(spec: &SweepSpec) -> Result<Vec<SweepPoint>> {
    if spec.axes.is_empty() {
        return Err(Error::Config { key: "sweep".into(), message: "no axes given".into() });
    }
    let mut seen = std::collections::HashSet::new();
    for axis in &spec.axes {
        if axis.values.is_empty() {
            return Err(Error::Config { key: axis.name.clone(), message: "sweep axis is empty".into() });
        }
        if !SWEEPABLE.contains(&axis.name.as_str()) {
            return Err(Error::Config { key: axis.name.clone(), message: format!("not sweepable; expected one of {SWEEPABLE:?}") });
        }
        if !seen.insert(axis.name.as_str()) {
            return Err(Error::Config { key: axis.name.clone(), message: "axis given twice".into() });
        }
    }
    if spec.derived_lr && (!seen.contains("batch_size") || seen.contains("lr")) {
        return Err(Error::Config { key: "sweep_derived_lr".into(), message: "needs a batch_size axis and no lr axis".into() });
    }
    let mut points = vec![BTreeMap::new()];
    for axis in &spec.axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.insert(axis.name.clone(), v);
                    q
                })
            })
            .collect();
    }
    Ok(points
        .into_iter()
        .enumerate()
        .map(|(index, mut values)| {
            if spec.derived_lr {
                let b = values["batch_size"];
                values.insert("lr".into(), derived_lr(b as usize));
            }
            SweepPoint { index, values }
        })
        .collect())
}

fn whole(key: &str, v: f64) -> Result<u64> {
    if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::Config { key: key.into(), message: format!("expected a non-negative integer, got {v}") });
    }
    Ok(v as u64)
}

/// The base config with the point's values substituted, validated.
pub fn apply_point(base: &ExperimentConfig, point: &SweepPoint) -> Result<ExperimentConfig> {
    let mut c = base.clone();
    for (k, &v) in &point.values {
        match k.as_str() {
            "batch_size" => c.batch_size = whole(k, v)? as usize,
            "lr" => c.lr = v,
            "temperature" => c.temperature = v,
            "epochs" => c.epochs = whole(k, v)? as usize,
            "seed" => c.seed = whole(k, v)?,
            _ => return Err(Error::Config { key: k.clone(), message: "not sweepable".into() }),
        }
    }
    c.run_id = point.run_id();
    c.validate()?;
    Ok(c)
}

/// What an executor reports for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub status: RunStatus,
    /// Table cell value: probe accuracy when available, else final loss.
    pub metric: Option<f64>,
    pub metrics_path: Option<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    pub message: Option<String>,
}

impl RunOutcome {
    pub fn completed(metric: f64) -> Self {
        Self { status: RunStatus::Completed, metric: Some(metric), metrics_path: None, artifacts: Vec::new(), message: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub point: SweepPoint,
    pub run_id: String,
    pub status: RunStatus,
    pub metric: Option<f64>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub runs: Vec<SweepRun>,
    pub table: String,
    pub journal: PathBuf,
}

impl SweepReport {
    pub fn count(&self, status: RunStatus) -> usize {
        self.runs.iter().filter(|r| r.status == status).count()
    }
}

/// Maps an executor result to a status. Non-finite metrics and divergence
/// errors mean the run did not converge; other errors mean it failed.
fn classify(result: Result<RunOutcome>) -> RunOutcome {
    match result {
        Ok(mut o) => {
            if o.metric.is_some_and(|m| !m.is_finite()) {
                o.status = RunStatus::Diverged;
                o.message.get_or_insert_with(|| "non-finite metric".into());
            }
            o
        }
        Err(e) => {
            let status = match e {
                Error::Diverged { .. } | Error::NonFinite(_) => RunStatus::Diverged,
                _ => RunStatus::Failed,
            };
            RunOutcome { status, metric: None, metrics_path: None, artifacts: Vec::new(), message: Some(e.to_string()) }
        }
    }
}

fn read_journal(path: &Path) -> Result<HashMap<String, SweepRun>> {
    let mut done = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    for line in std::fs::read_to_string(path)?.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<SweepRun>(line) {
            Ok(r) => {
                done.insert(r.run_id.clone(), r);
            }
            // A torn final line from a crash; that run is simply redone.
            Err(e) => log::warn!("ignoring unreadable journal line: {e}"),
        }
    }
    Ok(done)
}

/// Runs every grid point through `executor`, at most `parallelism` at a time.
///
/// Each run gets `sweep_dir/<run_id>` with its config and record. Finished
/// runs are appended to a journal; calling again with the same directory
/// skips them, so an interrupted sweep picks up where it stopped. Diverged and
/// failed runs are recorded and never abort the sweep.
pub fn run_sweep<F>(spec: &SweepSpec, base: &ExperimentConfig, sweep_dir: &Path, parallelism: usize, executor: F) -> Result<SweepReport>
where
    F: Fn(&ExperimentConfig, &Path) -> Result<RunOutcome> + Sync,
{
    let points = expand_grid(spec)?;
    let configs: Vec<ExperimentConfig> = points.iter().map(|p| apply_point(base, p)).collect::<Result<_>>()?;
    std::fs::create_dir_all(sweep_dir)?;
    let journal_path = sweep_dir.join(JOURNAL_FILE);
    let done = read_journal(&journal_path)?;
    let mut journal = std::fs::OpenOptions::new().create(true).append(true).open(&journal_path)?;

    let mut runs: Vec<Option<SweepRun>> = points.iter().map(|p| done.get(&p.run_id()).cloned()).collect();
    let pending: Vec<usize> = (0..points.len()).filter(|&i| runs[i].is_none()).collect();
    if pending.len() < points.len() {
        log::info!("sweep: {} of {} runs already journaled", points.len() - pending.len(), points.len());
    }

    for chunk in pending.chunks(parallelism.max(1)) {
        let outcomes: Vec<(usize, Result<RunOutcome>)> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let config = &configs[i];
                    let executor = &executor;
                    s.spawn(move || {
                        // Unjournaled leftovers are from a crashed attempt.
                        let dir = create_run_dir(sweep_dir, &config.run_id, config, true)?;
                        let outcome = classify(executor(config, &dir));
                        let mut record = RunRecord::new(config.run_id.clone(), "sweep", config.clone());
                        record.status = outcome.status;
                        record.metrics = outcome.metrics_path.clone();
                        record.artifacts = outcome.artifacts.clone();
                        record.message = outcome.message.clone();
                        record.summary = serde_json::json!({ "metric": outcome.metric });
                        record.save(&dir)?;
                        Ok(outcome)
                    })
                })
                .collect();
            chunk
                .iter()
                .zip(handles)
                .map(|(&i, h)| (i, h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("sweep run panicked".into())))))
                .collect()
        });
        for (i, outcome) in outcomes {
            let outcome = classify(outcome);
            log::info!("sweep {}: {:?} metric {:?}", configs[i].run_id, outcome.status, outcome.metric);
            let run = SweepRun {
                point: points[i].clone(),
                run_id: configs[i].run_id.clone(),
                status: outcome.status,
                metric: outcome.metric,
                message: outcome.message,
            };
            writeln!(journal, "{}", serde_json::to_string(&run)?)?;
            journal.flush()?;
            runs[i] = Some(run);
        }
    }

    let runs: Vec<SweepRun> = runs.into_iter().map(|r| r.expect("every point ran")).collect();
    let table = sweep_table(&runs)?;
    std::fs::write(sweep_dir.join(TABLE_FILE), &table)?;
    Ok(SweepReport { runs, table, journal: journal_path })
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

fn cell(run: &SweepRun) -> String {
    match (run.status, run.metric) {
        (RunStatus::Diverged, _) => "DNC".into(),
        (RunStatus::Completed, Some(m)) => format!("{m:.4}"),
        (RunStatus::Completed, None) => String::new(),
        _ => "failed".into(),
    }
}

/// Comma-separated table: batch sizes down, learning rates across, when both
/// are present; otherwise one row per value of the first axis. Runs that did
/// not converge show `DNC`.
pub fn sweep_table(runs: &[SweepRun]) -> Result<String> {
    let Some(first) = runs.first() else {
        return Ok(String::new());
    };
    let keys: Vec<&String> = first.point.values.keys().collect();
    let (row_key, col_key) = if keys.iter().any(|k| *k == "batch_size") && keys.iter().any(|k| *k == "lr") {
        ("batch_size".to_string(), Some("lr".to_string()))
    } else {
        let mut ks = keys.iter().map(|k| k.to_string());
        (ks.next().unwrap_or_default(), ks.next())
    };
    let mut rows: Vec<f64> = Vec::new();
    let mut cols: Vec<f64> = Vec::new();
    for r in runs {
        let rv = r.point.values[&row_key];
        if !rows.contains(&rv) {
            rows.push(rv);
        }
        if let Some(ck) = &col_key {
            let cv = r.point.values[ck];
            if !cols.contains(&cv) {
                cols.push(cv);
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    match &col_key {
        Some(ck) => {
            let mut header = vec![format!("{row_key}\\{ck}")];
            header.extend(cols.iter().map(|&c| fmt_value(c)));
            w.write_record(&header)?;
            for &rv in &rows {
                let mut line = vec![fmt_value(rv)];
                for &cv in &cols {
                    let found = runs.iter().find(|r| r.point.values[&row_key] == rv && r.point.values[ck] == cv);
                    line.push(found.map(cell).unwrap_or_default());
                }
                w.write_record(&line)?;
            }
        }
        None => {
            w.write_record([row_key.as_str(), "metric"])?;
            for r in runs {
                w.write_record([fmt_value(r.point.values[&row_key]), cell(r)])?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_lr_rule() {
        let lrs: Vec<f64> = [256, 512, 1024, 2048].into_iter().map(derived_lr).collect();
        assert_eq!(lrs, vec![0.3, 0.6, 1.2, 2.4]);
    }

    #[test]
    fn batch_lr_grid_is_cartesian() {
        let spec = SweepSpec::batch_lr(&[256, 512, 1024, 2048], &[0.3, 0.6, 1.2, 2.4]);
        let pts = expand_grid(&spec).unwrap();
        assert_eq!(pts.len(), 16);
        let pairs: std::collections::BTreeSet<(u64, u64)> =
            pts.iter().map(|p| (p.values["batch_size"] as u64, (p.values["lr"] * 10.0).round() as u64)).collect();
        assert_eq!(pairs.len(), 16);
        assert_eq!(pts[0].values["batch_size"], 256.0);
        assert_eq!(pts[1].values["lr"], 0.6);
    }

    #[test]
    fn empty_axis_is_an_error() {
        let spec = SweepSpec { axes: vec![SweepAxis::new("lr", [])], derived_lr: false };
        assert!(matches!(expand_grid(&spec), Err(Error::Config { key, .. }) if key == "lr"));
        assert!(expand_grid(&SweepSpec { axes: vec![], derived_lr: false }).is_err());
    }

    #[test]
    fn derived_mode_adds_lr() {
        let pts = expand_grid(&SweepSpec::derived(&[512])).unwrap();
        assert_eq!(pts[0].values["lr"], 0.6);
        let bad = SweepSpec { axes: vec![SweepAxis::new("temperature", [0.5])], derived_lr: true };
        assert!(expand_grid(&bad).is_err());
    }

    #[test]
    fn default_temperature_grid() {
        let c = ExperimentConfig { sweep_axis: "temperature".into(), ..ExperimentConfig::default() };
        let pts = expand_grid(&SweepSpec::from_config(&c)).unwrap();
        let taus: Vec<f64> = pts.iter().map(|p| p.values["temperature"]).collect();
        assert_eq!(taus, vec![0.05, 0.1, 0.3, 0.5, 1.0]);
    }

    #[test]
    fn nan_run_is_flagged_and_sweep_completes() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec::batch_lr(&[256, 512], &[0.3, 2.4]);
        let report = run_sweep(&spec, &ExperimentConfig::default(), dir.path(), 2, |c, _| {
            if c.lr > 2.0 && c.batch_size == 256 {
                Ok(RunOutcome::completed(f64::NAN))
            } else if c.lr > 2.0 {
                Err(Error::Diverged { epoch: 1, reason: "loss blew up".into() })
            } else {
                Ok(RunOutcome::completed(c.batch_size as f64 / 1000.0))
            }
        })
        .unwrap();
        assert_eq!(report.runs.len(), 4);
        assert_eq!(report.count(RunStatus::Diverged), 2);
        assert_eq!(report.count(RunStatus::Completed), 2);
        let lines: Vec<&str> = report.table.lines().collect();
        assert_eq!(lines[0], "batch_size\\lr,0.3,2.4");
        assert_eq!(lines[1], "256,0.2560,DNC");
        assert_eq!(lines[2], "512,0.5120,DNC");
        for r in &report.runs {
            let rec = RunRecord::load(&dir.path().join(&r.run_id)).unwrap();
            assert_eq!(rec.status, r.status);
        }
    }

    #[test]
    fn journal_skips_finished_runs() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec::temperature(&[0.1, 0.5]);
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let exec = |c: &ExperimentConfig, _: &Path| {
            calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok(RunOutcome::completed(c.temperature))
        };
        let first = run_sweep(&spec, &ExperimentConfig::default(), dir.path(), 1, exec).unwrap();
        let second = run_sweep(&spec, &ExperimentConfig::default(), dir.path(), 1, exec).unwrap();
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 2);
        assert_eq!(first.runs, second.runs);
        assert_eq!(first.table, "temperature,metric\n0.1,0.1000\n0.5,0.5000\n");
    }

    #[test]
    fn executor_errors_are_failures() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_sweep(&SweepSpec::temperature(&[0.5]), &ExperimentConfig::default(), dir.path(), 1, |_, _| {
            Err(Error::InvalidArgument("boom".into()))
        })
        .unwrap();
        assert_eq!(report.runs[0].status, RunStatus::Failed);
    }
}
