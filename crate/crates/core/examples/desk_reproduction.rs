//! The desk-scale reproduction for one seed: 20 epochs of SimCLR on 5 000
//! synthetic patches, then linear probes of each checkpoint against the
//! random initialisation. About eight minutes on one CPU core.
//!
//! cargo run --release --example desk_reproduction -- 0

use histoclr::experiment::{run_desk, DeskSettings};

fn main() -> histoclr::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let dir = std::env::temp_dir().join(format!("histoclr_desk_seed{seed}"));
    let _ = std::fs::remove_dir_all(&dir);
    let result = run_desk(&DeskSettings::new(seed), &dir)?;
    println!("random-init probe accuracy {:.4}", result.random_accuracy);
    println!("epoch,ssl_loss,probe_accuracy");
    for row in &result.curve {
        println!("{},{:.4},{:.4}", row.epoch, row.ssl_loss, row.probe_accuracy);
    }
    Ok(())
}
