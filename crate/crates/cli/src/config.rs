//! The run configuration file: a [`PipelineConfig`] in TOML plus a schema
//! version.

use std::path::Path;

use gpmorse::pipeline::PipelineConfig;
use gpmorse::{Error, Result};

pub const SCHEMA_VERSION: i64 = 1;

/// Reads a config file. `schema_version` must be present and equal to
/// [`SCHEMA_VERSION`]; every other key belongs to the pipeline config and
/// unknown keys are rejected.
pub fn read(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        e => e,
    })
}

pub fn parse(text: &str) -> Result<PipelineConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    match table.remove("schema_version") {
        Some(toml::Value::Integer(SCHEMA_VERSION)) => {}
        Some(v) => {
            return Err(Error::Config(format!(
                "unsupported schema_version {v} (this build reads {SCHEMA_VERSION})"
            )))
        }
        None => return Err(Error::Config("missing schema_version".into())),
    }
    PipelineConfig::from_toml(&toml::to_string(&table).expect("table serializes"))
}

pub fn render(config: &PipelineConfig) -> String {
    format!("schema_version = {SCHEMA_VERSION}\n{}", config.to_toml())
}
