//! Config files: TOML tables layered over a named preset.
//!
//! Resolution order, later wins: preset defaults, config file keys, command
//! line flags. Tables merge key by key; arrays and scalars are replaced. The
//! keys `preset` and `scale` select the base and are not part of the
//! resolved config.

use std::fs;
use std::path::Path;

use hmrf_core::harness::{Scale, StudyConfig};
use hmrf_core::pipeline::AnalyzeConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::CliError;

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn take_str(table: &mut Table, key: &str) -> Result<Option<String>, CliError> {
    match table.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(CliError::Usage(format!("config key {key:?} must be a string, got {other}"))),
    }
}

pub fn parse_scale(s: &str) -> Result<Scale, CliError> {
    match s {
        "desk" => Ok(Scale::Desk),
        "paper" => Ok(Scale::Paper),
        other => Err(CliError::Usage(format!("unknown scale {other:?} (expected desk or paper)"))),
    }
}

fn layer<T: Serialize + DeserializeOwned>(base: &T, file: Table, flags: Table) -> Result<T, CliError> {
    let mut table = Table::try_from(base)
        .map_err(|e| CliError::Usage(format!("cannot encode defaults: {e}")))?;
    merge(&mut table, file);
    merge(&mut table, flags);
    table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid config: {}", e.message())))
}

/// Study config from an optional file plus flag overrides. `preset` and
/// `scale` flags beat the file's keys; the defaults are `study1` at desk
/// scale.
pub fn resolve_study(
    file: Option<&Path>,
    preset: Option<&str>,
    scale: Option<&str>,
    flags: Table,
) -> Result<StudyConfig, CliError> {
    let mut table = match file {
        Some(p) => read_table(p)?,
        None => Table::new(),
    };
    let file_preset = take_str(&mut table, "preset")?;
    let file_scale = take_str(&mut table, "scale")?;
    let preset = preset.map(str::to_string).or(file_preset).unwrap_or_else(|| "study1".into());
    let scale = parse_scale(scale.map(str::to_string).or(file_scale).as_deref().unwrap_or("desk"))?;
    let base = StudyConfig::preset(&preset, scale).map_err(|e| CliError::Usage(e.to_string()))?;
    let config: StudyConfig = layer(&base, table, flags)?;
    config.validate().map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    Ok(config)
}

/// Analysis config; the default scale is `paper`.
pub fn resolve_analyze(file: Option<&Path>, scale: Option<&str>, flags: Table) -> Result<AnalyzeConfig, CliError> {
    let mut table = match file {
        Some(p) => read_table(p)?,
        None => Table::new(),
    };
    if let Some(p) = take_str(&mut table, "preset")? {
        return Err(CliError::Usage(format!("analyze has no presets (got {p:?}); use scale")));
    }
    let file_scale = take_str(&mut table, "scale")?;
    let scale = parse_scale(scale.map(str::to_string).or(file_scale).as_deref().unwrap_or("paper"))?;
    let config: AnalyzeConfig = layer(&AnalyzeConfig::preset(scale), table, flags)?;
    config.validate().map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    Ok(config)
}

/// Canonical TOML form of a resolved config.
pub fn echo<T: Serialize>(config: &T) -> Result<String, CliError> {
    toml::to_string(config).map_err(|e| CliError::Usage(format!("cannot encode config: {e}")))
}
