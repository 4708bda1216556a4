//! Layered run settings: command-line flags over a `key = value` config file
//! over built-in defaults.

use std::fmt::Display;
use std::path::Path;

use boundaryforge::textio::{format_kv, KeyValues};
use boundaryforge::{Error, Result};

/// Environment variable that replaces the default seed.
pub const SEED_ENV: &str = "BOUNDARYFORGE_SEED";

/// Seed used when neither a flag nor the config file sets one.
pub fn default_seed() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse().map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={v:?} is not an unsigned integer")))
        }
        Err(_) => Ok(0),
    }
}

/// Config file contents with flag overrides applied.
pub fn layered(config: Option<&Path>) -> Result<KeyValues> {
    match config {
        Some(p) => KeyValues::read(p),
        None => Ok(KeyValues::new("<flags>")),
    }
}

/// Sets `key` when the flag was given.
pub fn flag<T: Display>(kv: &mut KeyValues, key: &str, value: Option<T>) {
    if let Some(v) = value {
        kv.set(key, v.to_string());
    }
}

/// Fills `seed` from the environment when neither layer set it.
pub fn seed_default(kv: &mut KeyValues) -> Result<()> {
    if kv.get("seed").is_none() {
        kv.set("seed", default_seed()?.to_string());
    }
    Ok(())
}

pub fn take_or<T: std::str::FromStr>(kv: &mut KeyValues, key: &str, default: T) -> Result<T> {
    Ok(kv.take(key)?.unwrap_or(default))
}

pub fn take_required<T: std::str::FromStr>(kv: &mut KeyValues, key: &str) -> Result<T> {
    kv.take(key)?.ok_or_else(|| Error::InvalidArgument(format!("missing required setting {key}")))
}

/// Writes the resolved settings of a run next to its outputs.
pub fn write_snapshot(dir: &Path, command: &str, pairs: Vec<(&str, String)>) -> Result<()> {
    std::fs::write(dir.join(format!("{command}.resolved.cfg")), format_kv(pairs))?;
    Ok(())
}
