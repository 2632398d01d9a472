//! Flat key=value config files.
//!
//! One `key = value` pair per line; `#` starts a comment; blank lines are
//! skipped. Parse errors and unknown keys report the offending line number.
//! Values may be scalars or comma-separated lists.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected key=value, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value for {key}: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("missing required key {0:?}")]
    MissingKey(String),
}

/// A parsed config with typed, consumption-tracked getters.
///
/// Call the getters for every key the command understands, then
/// [`KvConfig::finish`]; leftovers become unknown-key errors.
#[derive(Debug, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, (String, usize)>,
    consumed: std::cell::RefCell<Vec<String>>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<KvConfig, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(ConfigError::BadLine {
                    line,
                    text: raw.trim().to_string(),
                });
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if entries.contains_key(&key) {
                return Err(ConfigError::DuplicateKey { line, key });
            }
            entries.insert(key, (value, line));
        }
        Ok(KvConfig {
            entries,
            consumed: std::cell::RefCell::new(Vec::new()),
        })
    }

    pub fn from_path(path: &Path) -> Result<KvConfig, ConfigError> {
        Ok(KvConfig::parse(&std::fs::read_to_string(path)?)?)
    }

    fn raw(&self, key: &str) -> Option<&(String, usize)> {
        let found = self.entries.get(key);
        if found.is_some() {
            self.consumed.borrow_mut().push(key.to_string());
        }
        found
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some((value, line)) => value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                line: *line,
                key: key.to_string(),
                reason: e.to_string(),
            }),
        }
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((value, line)) => value
                .parse()
                .map(Some)
                .map_err(|e: T::Err| ConfigError::BadValue {
                    line: *line,
                    key: key.to_string(),
                    reason: e.to_string(),
                }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get_opt(key)?
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    /// Comma-separated list, e.g. `widths = 16, 32`.
    pub fn get_list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some((value, line)) => value
                .split(',')
                .map(|part| {
                    part.trim()
                        .parse()
                        .map_err(|e: T::Err| ConfigError::BadValue {
                            line: *line,
                            key: key.to_string(),
                            reason: e.to_string(),
                        })
                })
                .collect(),
        }
    }

    /// Error out on any key no getter asked for.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let consumed = self.consumed.borrow();
        for (key, (_, line)) in &self.entries {
            if !consumed.iter().any(|c| c == key) {
                return Err(ConfigError::UnknownKey {
                    line: *line,
                    key: key.clone(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_scalars_lists_and_comments() {
        let cfg = KvConfig::parse(
            "# experiment\nseed = 7\nwidths = 16, 32\nstart_fraction = 0.1 # desk scale\n",
        )
        .unwrap();
        assert_eq!(cfg.get::<u64>("seed", 0).unwrap(), 7);
        assert_eq!(cfg.get_list::<usize>("widths", vec![]).unwrap(), vec![16, 32]);
        assert_eq!(cfg.get::<f64>("start_fraction", 1.0).unwrap(), 0.1);
        assert_eq!(cfg.get::<u64>("missing", 42).unwrap(), 42);
        cfg.finish().unwrap();
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = KvConfig::parse("seed = 1\nnot a pair\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadLine { line: 2, .. }), "{err}");

        let cfg = KvConfig::parse("seed = x\n").unwrap();
        let err = cfg.get::<u64>("seed", 0).unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { line: 1, .. }), "{err}");

        let cfg = KvConfig::parse("seed = 1\nmystery = 2\n").unwrap();
        let _ = cfg.get::<u64>("seed", 0);
        let err = cfg.finish().unwrap_err();
        assert!(
            matches!(err, ConfigError::UnknownKey { line: 2, ref key } if key == "mystery"),
            "{err}"
        );

        let err = KvConfig::parse("a = 1\na = 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { line: 2, .. }), "{err}");
    }
}
