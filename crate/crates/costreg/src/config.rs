//! Config-file loading and override resolution.
//!
//! Config files are flat `key=value` text, one pair per line, `#` comments;
//! keys mirror the training-config field names exactly and unknown keys are
//! rejected with their line number. Overrides resolve in order: defaults,
//! file, `--set key=value` flags, then an explicit `--seed`. When none of
//! those set a seed, the `COSTREG_SEED` environment variable is the fallback.

use std::path::Path;

use costreg_core::train::TrainConfig;
use costreg_core::{Error, Result};

pub const SEED_ENV_VAR: &str = "COSTREG_SEED";

/// Parse `--set key=value` override strings.
pub fn parse_overrides(sets: &[String]) -> Result<Vec<(String, String)>> {
    sets.iter()
        .map(|raw| {
            raw.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{raw}'")))
        })
        .collect()
}

/// Resolve the effective config from a file plus overrides.
pub fn resolve_config(
    file_text: Option<&str>,
    overrides: &[(String, String)],
    seed_flag: Option<u64>,
) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    let mut seed_given = false;

    if let Some(text) = file_text {
        config.apply_flat_text(text)?;
        seed_given |= flat_text_sets_seed(text);
    }
    for (key, value) in overrides {
        config.set_key(key, value)?;
        if key == "seed" {
            seed_given = true;
        }
    }
    if let Some(seed) = seed_flag {
        config.seed = seed;
        seed_given = true;
    }
    if !seed_given {
        if let Ok(value) = std::env::var(SEED_ENV_VAR) {
            config.seed = value.trim().parse().map_err(|_| {
                Error::Config(format!("malformed {SEED_ENV_VAR} value '{value}'"))
            })?;
        }
    }
    config.validate()?;
    Ok(config)
}

fn flat_text_sets_seed(text: &str) -> bool {
    text.lines().any(|line| {
        let line = line.trim();
        !line.starts_with('#')
            && line
                .split_once('=')
                .map(|(k, _)| k.trim() == "seed")
                .unwrap_or(false)
    })
}

pub fn load_config_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config '{}': {e}", path.display())))
}
