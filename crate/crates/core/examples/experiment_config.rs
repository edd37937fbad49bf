//! Parse a flat TOML experiment config, see how errors name keys, and derive
//! the pre-training and probe settings from it.

use histoclr::eval::ProbeMode;
use histoclr::experiment::ExperimentConfig;

fn main() -> histoclr::Result<()> {
    let text = r#"
backbone = "small_cnn"
projection_dim = 64
projection_hidden = 128
input_size = 32
batch_size = 256
epochs = 20
lr = 0.3
checkpoint_epochs = [5, 10, 15, 20]
"#;
    let config = ExperimentConfig::from_toml_str(text)?;
    let pretrain = config.pretrain_config()?;
    println!("tau {} batch {} lr {} checkpoints {:?}", pretrain.temperature, pretrain.batch_size, pretrain.base_lr, pretrain.checkpoint_epochs);
    println!("finetune preset: {:?}", config.probe_config(ProbeMode::Finetune)?);

    for bad in ["temperature = -1", "batchsize = 12", "epochs = \"many\""] {
        println!("{bad:<20} -> {}", ExperimentConfig::from_toml_str(bad).unwrap_err());
    }
    println!("--- resolved config ---\n{}", config.to_toml_string()?);
    Ok(())
}
