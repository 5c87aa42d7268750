//! TOML experiment configuration.
//!
//! Each experiment owns a flat key/value schema; every key is optional and
//! falls back to the acceptance defaults. Unknown keys, type errors and
//! failed range checks are all reported with the offending field path.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// A typed experiment configuration.
pub trait ExperimentConfig: Serialize + DeserializeOwned + Default {
    fn validate(&self, v: &mut Validator);
}

/// Collects range violations as `path: message` lines.
#[derive(Debug, Default)]
pub struct Validator {
    errors: Vec<String>,
}

impl Validator {
    pub fn require(&mut self, ok: bool, path: &str, message: &str) {
        if !ok {
            self.errors.push(format!("{path}: {message}"));
        }
    }

    pub fn positive(&mut self, path: &str, x: f64) {
        self.require(x > 0.0 && x.is_finite(), path, "must be positive and finite");
    }

    pub fn non_negative(&mut self, path: &str, x: f64) {
        self.require(x >= 0.0 && x.is_finite(), path, "must be non-negative and finite");
    }

    pub fn at_least(&mut self, path: &str, n: usize, min: usize) {
        self.require(n >= min, path, &format!("must be at least {min}"));
    }

    pub fn each<T>(&mut self, path: &str, xs: &[T], check: impl Fn(&T) -> Option<String>) {
        self.require(!xs.is_empty(), path, "must not be empty");
        for (i, x) in xs.iter().enumerate() {
            if let Some(msg) = check(x) {
                self.errors.push(format!("{path}[{i}]: {msg}"));
            }
        }
    }

    pub fn finish(self) -> Result<()> {
        if self.errors.is_empty() {
            Ok(())
        } else {
            Err(anyhow!("invalid configuration:\n  {}", self.errors.join("\n  ")))
        }
    }
}

/// Parses TOML text into `C`, then validates it.
pub fn parse<C: ExperimentConfig>(text: &str) -> Result<C> {
    let table: toml::Table = text.parse().context("config is not valid TOML")?;
    let cfg: C = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("invalid configuration:\n  {path}: {}", e.into_inner())
    })?;
    let mut v = Validator::default();
    cfg.validate(&mut v);
    v.finish()?;
    Ok(cfg)
}

/// Loads `path` (or the defaults when absent) and returns the config with
/// its resolved JSON form, which the manifest hashes.
pub fn load<C: ExperimentConfig>(path: Option<&Path>) -> Result<(C, Value)> {
    let cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            parse(&text).with_context(|| format!("config {}", p.display()))?
        }
        None => {
            let cfg = C::default();
            let mut v = Validator::default();
            cfg.validate(&mut v);
            v.finish().context("built-in defaults")?;
            cfg
        }
    };
    let json = serde_json::to_value(&cfg)?;
    Ok((cfg, json))
}

/// Renders the defaults of `C` as a TOML document.
pub fn defaults_toml<C: ExperimentConfig>() -> Result<String> {
    Ok(toml::to_string(&C::default())?)
}
