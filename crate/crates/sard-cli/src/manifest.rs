//! Run manifest: which command ran, with what configuration and seed.
//! No timestamps, so identical runs produce identical manifests.

use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    outputs: Vec<String>,
    config: &'a ExperimentConfig,
}

pub fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, outputs: &[String]) -> anyhow::Result<()> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        outputs: outputs.to_vec(),
        config: cfg,
    };
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("manifest_{command}.toml")), toml::to_string(&m)?)?;
    Ok(())
}
