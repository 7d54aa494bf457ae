use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use ucl_core::graphs::SyntheticConfig;
use ucl_core::harness::TrainConfig;

/// Reads TOML, or JSON when the file ends in `.json`. Missing keys take
/// their defaults; unknown keys are rejected.
pub fn load_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

pub fn load_synthetic_config(path: &Path) -> Result<SyntheticConfig> {
    let c: SyntheticConfig = load_file(path)?;
    c.validate().with_context(|| format!("invalid config {}", path.display()))?;
    Ok(c)
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let c: TrainConfig = load_file(path)?;
    c.validate().with_context(|| format!("invalid config {}", path.display()))?;
    Ok(c)
}
