//! `key = value` configuration files for the command line tool.
//!
//! Blank lines and everything after `#` are ignored. Keys may use `-` or
//! `_` interchangeably. Command-line flags take precedence over the file,
//! and the file over built-in defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-").to_ascii_lowercase()
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format("config", format!("line {}: expected key = value", n + 1)))?;
            let key = normalize(key);
            if key.is_empty() {
                return Err(Error::format("config", format!("line {}: empty key", n + 1)));
            }
            if entries.insert(key.clone(), (n + 1, value.trim().to_string())).is_some() {
                return Err(Error::format("config", format!("line {}: duplicate key `{key}`", n + 1)));
            }
        }
        Ok(ConfigFile { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ConfigFile::parse(&text)
    }

    /// Fails on the first key not in `known`.
    pub fn ensure_known(&self, known: &[&str]) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            Some((k, (line, _))) => Err(Error::InvalidArgument(format!(
                "unknown config key `{k}` on line {line} (known keys: {})",
                known.join(", ")
            ))),
            None => Ok(()),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(&normalize(key)).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((line, v)) = self.entries.get(&normalize(key)) else { return Ok(None) };
        v.parse()
            .map(Some)
            .map_err(|e| Error::InvalidArgument(format!("config key `{key}` on line {line}: {e}")))
    }

    /// `flag`, else the file value, else `default`.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let c = ConfigFile::parse("# top\n\nepochs = 3  # inline\nlearning_rate=0.1\n").unwrap();
        assert_eq!(c.get::<usize>("epochs").unwrap(), Some(3));
        assert_eq!(c.get::<f64>("learning-rate").unwrap(), Some(0.1));
        assert_eq!(c.get::<usize>("missing").unwrap(), None);
    }

    #[test]
    fn precedence() {
        let c = ConfigFile::parse("epochs = 3").unwrap();
        assert_eq!(c.resolve(Some(9), "epochs", 1).unwrap(), 9);
        assert_eq!(c.resolve(None, "epochs", 1).unwrap(), 3);
        assert_eq!(c.resolve(None, "seed", 1u64).unwrap(), 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ConfigFile::parse("novalue").is_err());
        assert!(ConfigFile::parse("a=1\na=2").is_err());
        let c = ConfigFile::parse("epoch = 3").unwrap();
        let err = c.ensure_known(&["epochs"]).unwrap_err().to_string();
        assert!(err.contains("epoch") && err.contains("line 1"), "{err}");
        assert!(c.get::<usize>("epoch").is_ok());
        assert!(ConfigFile::parse("epochs = x").unwrap().get::<usize>("epochs").is_err());
    }
}
