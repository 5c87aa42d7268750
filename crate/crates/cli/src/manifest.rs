//! Run manifests: provenance plus one explicit status per check.

use std::collections::BTreeMap;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use acolab::measures::GENERATOR_ID;

/// One named pass/fail check with the values it was decided on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub values: BTreeMap<String, Value>,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.into(),
            passed,
            values: BTreeMap::new(),
        }
    }

    /// Attaches a measured value; non-finite floats become `null`.
    pub fn value(mut self, key: &str, v: impl Into<Value>) -> Self {
        self.values.insert(key.to_string(), v.into());
        self
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.values.get(key).and_then(Value::as_f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub experiment: String,
    /// SHA-256 of the resolved configuration serialized as compact JSON.
    pub config_hash: String,
    pub config: Value,
    pub seed: u64,
    pub generator: String,
    pub started_at: String,
    pub finished_at: String,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub passed: bool,
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn config_hash(config: &Value) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(
        experiment: &str,
        seed: u64,
        config: &Value,
        checks: Vec<Check>,
        started_at: String,
        mut artifacts: Vec<String>,
    ) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for c in &checks {
            anyhow::ensure!(seen.insert(c.name.as_str()), "check `{}` registered twice", c.name);
        }
        artifacts.push("manifest.json".into());
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: experiment.to_string(),
            config_hash: config_hash(config)?,
            config: config.clone(),
            seed,
            generator: GENERATOR_ID.to_string(),
            started_at,
            finished_at: timestamp(),
            passed: checks.iter().all(|c| c.passed),
            checks,
            artifacts,
        })
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = serde_json::json!({"n": 1, "eps": 0.5});
        let b = serde_json::json!({"n": 2, "eps": 0.5});
        assert_eq!(config_hash(&a).unwrap(), config_hash(&a.clone()).unwrap());
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn aggregate_status_and_duplicates() {
        let cfg = serde_json::json!({});
        let ok = Check::new("a", true).value("x", 1.5);
        let bad = Check::new("b", false).value("x", f64::NAN);
        let m = RunManifest::new("e", 7, &cfg, vec![ok.clone(), bad], timestamp(), vec![]).unwrap();
        assert!(!m.passed);
        assert_eq!(m.failed().count(), 1);
        assert_eq!(m.check("b").unwrap().values["x"], Value::Null);
        assert!(RunManifest::new("e", 7, &cfg, vec![ok.clone(), ok], timestamp(), vec![]).is_err());
    }
}
