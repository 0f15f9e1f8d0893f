//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored; later keys override
//! earlier ones.

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid value `{value}` for `{key}`")]
    Value { key: String, value: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
}

impl ConfigError {
    pub fn value(key: &str, value: &str) -> Self {
        ConfigError::Value {
            key: key.into(),
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn insert(&mut self, key: &str, value: &str) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Sub-map of keys starting with `prefix.`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> KeyValues {
        let p = format!("{prefix}.");
        KeyValues {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Fail on the first key not listed in `known`.
    pub fn ensure_known(&self, known: &[&str]) -> Result<(), ConfigError> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(ConfigError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }

    fn set<T: std::str::FromStr>(&self, key: &str, slot: &mut T) -> Result<(), ConfigError> {
        if let Some(v) = self.get(key) {
            *slot = v.parse().map_err(|_| ConfigError::value(key, v))?;
        }
        Ok(())
    }

    pub fn set_f64(&self, key: &str, slot: &mut f64) -> Result<(), ConfigError> {
        self.set(key, slot)
    }

    pub fn set_usize(&self, key: &str, slot: &mut usize) -> Result<(), ConfigError> {
        self.set(key, slot)
    }

    pub fn set_u64(&self, key: &str, slot: &mut u64) -> Result<(), ConfigError> {
        self.set(key, slot)
    }

    pub fn set_bool(&self, key: &str, slot: &mut bool) -> Result<(), ConfigError> {
        self.set(key, slot)
    }
}
