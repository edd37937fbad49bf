//! A batch-size / learning-rate sweep with a toy executor standing in for
//! pre-training, including a run that blows up.

use histoclr::contrastive::RunStatus;
use histoclr::experiment::{run_sweep, ExperimentConfig, RunOutcome, SweepSpec};
use histoclr::Error;

fn main() -> histoclr::Result<()> {
    let dir = std::env::temp_dir().join("histoclr_sweep_grid");
    let _ = std::fs::remove_dir_all(&dir);
    let spec = SweepSpec::batch_lr(&[256, 512, 1024, 2048], &[0.3, 0.6, 1.2, 2.4]);
    // Pretend accuracy peaks near the linear scaling rule; large lr at small batch diverges.
    let report = run_sweep(&spec, &ExperimentConfig::default(), &dir, 1, |c, _| {
        let ideal = 0.3 * c.batch_size as f64 / 256.0;
        if c.lr > 4.0 * ideal {
            return Err(Error::Diverged { epoch: 3, reason: "loss is NaN".into() });
        }
        Ok(RunOutcome::completed(0.9 - 0.05 * (c.lr / ideal).ln().abs()))
    })?;
    print!("{}", report.table);
    println!("{} completed, {} did not converge", report.count(RunStatus::Completed), report.count(RunStatus::Diverged));

    let derived = run_sweep(&SweepSpec::derived(&[256, 512, 1024, 2048]), &ExperimentConfig::default(), &dir.join("derived"), 1, |c, _| {
        Ok(RunOutcome::completed(c.lr))
    })?;
    print!("{}", derived.table);
    Ok(())
}
