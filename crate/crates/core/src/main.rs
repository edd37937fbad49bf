use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use histoclr::contrastive::RunStatus;
use histoclr::eval::ProbeMode;
use histoclr::experiment::{self as exp, ExperimentConfig, RunRecord, DATA_ROOT_ENV};

#[derive(Parser)]
#[command(name = "histoclr", version, about = "Contrastive pre-training and evaluation for histopathology patches")]
struct Cli {
    /// Flat TOML config; unset keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory holding one sub-directory per run.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root for relative data paths in the config.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
    /// Config override, e.g. `--set epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replace an existing run with the same id.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate annotated synthetic slides.
    Synth,
    /// Sample unsupervised and supervised patch datasets from `slides`.
    Sample,
    /// Contrastive pre-training on `unsupervised_manifest`.
    Pretrain {
        #[arg(long)]
        resume: bool,
        /// Stop after this epoch, leaving a resumable run.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Linear probe of `checkpoint`.
    Probe,
    /// Fine-tuning of `checkpoint`, or training from scratch with `mode = "scratch"`.
    Finetune,
    /// Batch/learning-rate or temperature grid.
    Sweep {
        #[arg(long)]
        resume: bool,
    },
    /// Anchor-negative similarity statistics.
    Diagnose,
    /// Probe accuracy against pre-training epoch.
    Curve,
    /// Embeddings and their PCA projection.
    Export,
}

fn load_config(cli: &Cli) -> histoclr::Result<ExperimentConfig> {
    let mut table = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(histoclr::Error::MissingFile(path.clone()));
            }
            std::fs::read_to_string(path)?
                .parse::<toml::Table>()
                .map_err(|e| histoclr::Error::Config { key: "<file>".into(), message: e.message().to_string() })?
        }
        None => toml::Table::new(),
    };
    for item in &cli.overrides {
        let Some((key, value)) = item.split_once('=') else {
            return Err(histoclr::Error::Config { key: item.clone(), message: "expected KEY=VALUE".into() });
        };
        let key = key.trim();
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
    }
    let text = toml::to_string(&table).map_err(|e| histoclr::Error::Config { key: "<overrides>".into(), message: e.to_string() })?;
    let mut config = ExperimentConfig::from_toml_str(&text)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.display().to_string();
    }
    if let Some(root) = &cli.data_root {
        config.data_root = root.display().to_string();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> histoclr::Result<RunRecord> {
    let config = load_config(cli)?;
    let force = cli.force;
    match &cli.command {
        Command::Synth => exp::synth(&config, force),
        Command::Sample => exp::sample(&config, force),
        Command::Pretrain { resume, stop_after } => exp::pretrain_command(&config, force, *resume, *stop_after),
        Command::Probe => exp::evaluate_command(&config, ProbeMode::Linear, force),
        Command::Finetune => {
            let mode = match config.probe_mode()? {
                ProbeMode::Scratch => ProbeMode::Scratch,
                _ => ProbeMode::Finetune,
            };
            exp::evaluate_command(&config, mode, force)
        }
        Command::Sweep { resume } => {
            let (record, report) = exp::sweep_command(&config, force, *resume)?;
            print!("{}", report.table);
            Ok(record)
        }
        Command::Diagnose => exp::diagnose_command(&config, force),
        Command::Curve => exp::curve_command(&config, force),
        Command::Export => exp::export_command(&config, force),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(record) => {
            println!("{}", serde_json::json!({ "run_id": record.run_id, "status": record.status, "summary": record.summary }));
            match record.status {
                RunStatus::Completed | RunStatus::Interrupted => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
