//! Flat key-value config files. Command-line flags take precedence over keys.

use std::path::Path;

use failband::{Error, Result};
use serde::de::DeserializeOwned;

/// Every key any subcommand reads. Anything else in a config file is rejected.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "n_rollouts",
    "t_max",
    "h",
    "h_prime",
    "t_o",
    "noise",
    "obs_noise",
    "d_feature",
    "failures",
    "success_eps",
    "first_index",
    "method",
    "epochs",
    "batch_size",
    "lr",
    "hidden",
    "out_dim",
    "consistency_weight",
    "k",
    "components",
    "variance_target",
    "alpha",
    "variant",
    "split_ratio",
    "allow_mixed",
    "stac_batch_size",
    "stac_mode",
    "setting",
    "grid",
    "reps",
];

pub const SEED_ENV: &str = "FAILBAND_SEED";

#[derive(Debug, Default)]
pub struct Config {
    table: toml::Table,
}

fn config_error(field: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        msg: msg.into(),
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).map_err(|e| config_error("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| config_error("config", e.message()))?;
        for (key, value) in &table {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(config_error(key, "unknown key"));
            }
            if value.is_table() {
                return Err(config_error(key, "nested tables are not supported"));
            }
        }
        Ok(Self { table })
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        debug_assert!(KNOWN_KEYS.contains(&key), "unlisted config key {key}");
        match self.table.get(key) {
            None => Ok(None),
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .map_err(|e: toml::de::Error| config_error(key, e.message())),
        }
    }

    /// Flag value, else config value, else `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    /// Flag value, else config value, if either is set.
    pub fn pick_opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    /// Seed from the flag, the config, then the environment; 0 otherwise.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = self.pick_opt(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| config_error(SEED_ENV, format!("not an unsigned integer: `{v}`"))),
            Err(_) => Ok(0),
        }
    }
}
