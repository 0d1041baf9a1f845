//! Flat `key = value` experiment configuration files. `#` starts a
//! comment; keys may not repeat; unknown keys are rejected with their line
//! number so typos fail fast.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Config {
    source: String,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

impl Config {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| Error::Parse {
                location: format!("{}:{}", source, line),
                detail: format!("expected key = value, got {:?}", stripped),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    location: format!("{}:{}", source, line),
                    detail: "empty key".into(),
                });
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::Parse {
                    location: format!("{}:{}", source, line),
                    detail: format!("key {:?} already set on line {}", key, prev.line),
                });
            }
            entries.push(Entry { key, value, line });
        }
        Ok(Self {
            source: source.to_string(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Fail on any key outside the allowed set, naming the line.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for e in &self.entries {
            if !allowed.contains(&e.key.as_str()) {
                return Err(Error::Parse {
                    location: format!("{}:{}", self.source, e.line),
                    detail: format!("unknown key {:?}", e.key),
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.key == key)
            .map(|e| e.value.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Parse {
            location: self.source.clone(),
            detail: format!("missing required key {:?}", key),
        })
    }

    fn parse_with<T: std::str::FromStr>(&self, key: &str, value: &str) -> Result<T> {
        value.parse().map_err(|_| {
            let line = self
                .entries
                .iter()
                .find(|e| e.key == key)
                .map(|e| e.line)
                .unwrap_or(0);
            Error::Parse {
                location: format!("{}:{}", self.source, line),
                detail: format!("cannot parse {:?} as {}", value, std::any::type_name::<T>()),
            }
        })
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            Some(v) => Ok(Some(self.parse_with(key, v)?)),
            None => Ok(None),
        }
    }

    pub fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get_parsed(key)?.unwrap_or(default))
    }

    pub fn require_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?.to_string();
        self.parse_with(key, &v)
    }

    /// Comma-separated list of floats.
    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    out.push(self.parse_with::<f64>(key, part.trim())?);
                }
                Ok(Some(out))
            }
        }
    }
}
