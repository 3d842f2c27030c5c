use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "instruction",
    "em",
    "at",
    "tr",
    "paradigm",
    "relation_set",
    "backend_url",
    "model",
    "cache",
    "temperature",
    "max_tokens",
    "timeout_secs",
    "max_retries",
    "parallelism",
    "api_key_env",
    "wire",
    "system_prompt",
    "single_word_request",
    "exclude_na",
    "steps",
    "d",
    "k",
    "rank",
    "lr",
];

/// Values from the optional `key = value` config file, overridden by flags.
/// Every value that was resolved is recorded for the config hash.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, toml::Value>,
    resolved: BTreeMap<String, Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
        let mut file = BTreeMap::new();
        for (k, v) in table {
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(CliError::Usage(format!(
                    "config file {}: unknown key {k:?}",
                    path.display()
                )));
            }
            if v.is_table() || v.is_array() {
                return Err(CliError::Usage(format!("config key {k:?} must be a plain value")));
            }
            file.insert(k, v);
        }
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn bad(key: &str, want: &str) -> CliError {
        CliError::Usage(format!("config key {key:?} must be {want}"))
    }

    pub fn string(
        &mut self,
        key: &str,
        flag: Option<String>,
        default: Option<&str>,
    ) -> Result<Option<String>, CliError> {
        let v = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(toml::Value::String(s)) => Some(s.clone()),
                Some(_) => return Err(Self::bad(key, "a string")),
                None => default.map(str::to_string),
            },
        };
        if let Some(s) = &v {
            self.resolved.insert(key.into(), Value::from(s.as_str()));
        }
        Ok(v)
    }

    pub fn require(&mut self, key: &str, flag: Option<String>) -> Result<String, CliError> {
        self.string(key, flag, None)?.ok_or_else(|| {
            CliError::Usage(format!(
                "--{} is required (flag or config key {key:?})",
                key.replace('_', "-")
            ))
        })
    }

    pub fn boolean(&mut self, key: &str, flag: Option<bool>, default: bool) -> Result<bool, CliError> {
        let v = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(toml::Value::Boolean(b)) => *b,
                Some(_) => return Err(Self::bad(key, "true or false")),
                None => default,
            },
        };
        self.resolved.insert(key.into(), Value::from(v));
        Ok(v)
    }

    pub fn integer(&mut self, key: &str, flag: Option<u64>, default: u64) -> Result<u64, CliError> {
        let v = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(toml::Value::Integer(i)) if *i >= 0 => *i as u64,
                Some(_) => return Err(Self::bad(key, "a non-negative integer")),
                None => default,
            },
        };
        self.resolved.insert(key.into(), Value::from(v));
        Ok(v)
    }

    pub fn real(&mut self, key: &str, flag: Option<f64>, default: f64) -> Result<f64, CliError> {
        let v = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(toml::Value::Float(f)) => *f,
                Some(toml::Value::Integer(i)) => *i as f64,
                Some(_) => return Err(Self::bad(key, "a number")),
                None => default,
            },
        };
        self.resolved.insert(key.into(), Value::from(v));
        Ok(v)
    }

    /// Records a flag-only value (such as an input path) in the hash.
    pub fn note(&mut self, key: &str, value: impl Into<Value>) {
        self.resolved.insert(key.into(), value.into());
    }

    /// First 16 hex digits of SHA-256 over the resolved values as JSON.
    pub fn hash(&self, command: &str) -> String {
        let material = serde_json::json!({"command": command, "values": self.resolved});
        let digest = Sha256::digest(material.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
