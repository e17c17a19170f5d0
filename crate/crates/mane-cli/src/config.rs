//! Key-value run configuration: a UTF-8 file of `key = value` lines plus
//! command-line overrides, with unknown keys rejected.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Parse { line: usize, content: String },
    UnknownKey(String),
    MissingKey(&'static str),
    BadValue { key: String, value: String, expected: &'static str },
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "config io error: {e}"),
            ConfigError::Parse { line, content } => {
                write!(f, "config line {line} is not `key = value`: {content:?}")
            }
            ConfigError::UnknownKey(k) => write!(f, "unknown config key: {k}"),
            ConfigError::MissingKey(k) => write!(f, "missing config key: {k}"),
            ConfigError::BadValue { key, value, expected } => {
                write!(f, "config key {key} = {value:?}: expected {expected}")
            }
            ConfigError::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Default)]
pub struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    pub fn from_str_content(text: &str) -> Result<Config, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: i + 1,
                    content: raw.to_string(),
                });
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Config { map })
    }

    pub fn load(path: &str) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{path}: {e}")))?;
        Config::from_str_content(&text)
    }

    /// Apply a `key=value` override (overrides win over the file).
    pub fn set_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(ConfigError::Parse {
                line: 0,
                content: kv.to_string(),
            });
        };
        self.map.insert(k.trim().to_string(), v.trim().to_string());
        Ok(())
    }

    /// Reject any key not in the command's allowed list.
    pub fn restrict(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for k in self.map.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey(k.clone()));
            }
        }
        Ok(())
    }

    /// Resolved key-value view embedded into every report.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.map.clone()
    }

    pub fn get(&self, key: &'static str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &'static str) -> Result<&str, ConfigError> {
        self.get(key).ok_or(ConfigError::MissingKey(key))
    }

    pub fn f64_or(&self, key: &'static str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                expected: "a real number",
            }),
        }
    }

    pub fn usize_or(&self, key: &'static str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                expected: "a non-negative integer",
            }),
        }
    }

    pub fn u64_or(&self, key: &'static str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                expected: "an unsigned integer",
            }),
        }
    }

    pub fn bool_or(&self, key: &'static str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(v) => Err(ConfigError::BadValue {
                key: key.to_string(),
                value: v.to_string(),
                expected: "true or false",
            }),
        }
    }

    pub fn f64_list(&self, key: &'static str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(v) = self.get(key) else { return Ok(None) };
        if v.trim().is_empty() {
            return Ok(Some(Vec::new()));
        }
        let parsed: Result<Vec<f64>, _> = v.split(',').map(|s| s.trim().parse()).collect();
        parsed.map(Some).map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
            expected: "comma-separated reals",
        })
    }

    pub fn usize_list(&self, key: &'static str) -> Result<Option<Vec<usize>>, ConfigError> {
        let Some(v) = self.get(key) else { return Ok(None) };
        if v.trim().is_empty() {
            return Ok(Some(Vec::new()));
        }
        let parsed: Result<Vec<usize>, _> = v.split(',').map(|s| s.trim().parse()).collect();
        parsed.map(Some).map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
            expected: "comma-separated integers",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut cfg = Config::from_str_content("# run\n dt = 0.01 \n\nt_final = 2\n").unwrap();
        assert_eq!(cfg.f64_or("dt", 0.0).unwrap(), 0.01);
        cfg.set_override("dt=0.5").unwrap();
        assert_eq!(cfg.f64_or("dt", 0.0).unwrap(), 0.5);
    }

    #[test]
    fn rejects_unknown_keys() {
        let cfg = Config::from_str_content("dt = 0.01\nwat = 3\n").unwrap();
        assert!(matches!(
            cfg.restrict(&["dt"]),
            Err(ConfigError::UnknownKey(k)) if k == "wat"
        ));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(Config::from_str_content("dt 0.01").is_err());
    }
}
