//! Command-line orchestration: synth, train, ablate, rank and eval, with a
//! TOML config, flag overrides and a manifest per run.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::time::Instant;

pub use config::{Cli, Command, RunConfig};
pub use error::{PipelineError, Result};
pub use manifest::Manifest;

/// Resolves the configuration, runs the command and writes its manifest.
pub fn run(cli: &Cli) -> Result<Manifest> {
    let start = Instant::now();
    let cfg = RunConfig::resolve(cli)?;
    let outcome = commands::execute(&cli.command, &cfg)?;
    let mut manifest = Manifest {
        command: cli.command.name().to_string(),
        resolved_config: serde_json::to_value(&cfg).map_err(imupose_core::Error::from)?,
        inputs: outcome.inputs,
        outputs: Default::default(),
        duration_s: start.elapsed().as_secs_f64(),
        summary: outcome.summary,
    };
    manifest.write(&cfg.out, &outcome.outputs)?;
    Ok(manifest)
}
