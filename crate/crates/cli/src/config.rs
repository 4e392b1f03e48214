//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored.
//! Keys are checked against a fixed schema; unknown or repeated keys are
//! errors. Values are typed when read.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    path: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(CliError::Config(format!(
                    "{}:{line_no}: expected 'key = value'",
                    path.display()
                )));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(CliError::Config(format!(
                    "{}:{line_no}: empty key",
                    path.display()
                )));
            }
            if let Some((_, first)) = entries.insert(k.to_owned(), (v.to_owned(), line_no)) {
                return Err(CliError::Config(format!(
                    "{}:{line_no}: key '{k}' already set on line {first}",
                    path.display()
                )));
            }
        }
        Ok(RawConfig {
            path: path.to_owned(),
            entries,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Reject keys outside `allowed`, naming the first offender.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), CliError> {
        match self
            .entries
            .iter()
            .find(|(k, _)| !allowed.contains(&k.as_str()))
        {
            Some((k, (_, line))) => Err(CliError::Config(format!(
                "{}:{line}: unknown key '{k}'",
                self.path.display()
            ))),
            None => Ok(()),
        }
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get<T>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some((v, line)) => self.parse_value(key, v, *line),
        }
    }

    pub fn require<T>(&self, key: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Err(CliError::Config(format!(
                "{}: missing required key '{key}'",
                self.path.display()
            ))),
            Some((v, line)) => self.parse_value(key, v, *line),
        }
    }

    /// Comma-separated list.
    pub fn get_list<T>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some((v, line)) => v
                .split(',')
                .map(|item| self.parse_value(key, item.trim(), *line))
                .collect(),
        }
    }

    fn parse_value<T>(&self, key: &str, v: &str, line: usize) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        v.parse().map_err(|e: T::Err| {
            CliError::Config(format!(
                "{}:{line}: bad value '{v}' for '{key}': {e}",
                self.path.display()
            ))
        })
    }
}

/// Join list items for the resolved-config record.
pub fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RawConfig, CliError> {
        RawConfig::parse(text, Path::new("test.cfg"))
    }

    #[test]
    fn parses_comments_and_lists() {
        let c = parse("# header\n a = 3 \n\nb = 1, 2,3 # trailing\n").unwrap();
        assert_eq!(c.get::<u32>("a", 0).unwrap(), 3);
        assert_eq!(c.get_list::<u32>("b", vec![]).unwrap(), vec![1, 2, 3]);
        assert_eq!(c.get::<f64>("missing", 0.5).unwrap(), 0.5);
        assert!(c.require::<f64>("missing").is_err());
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(parse("just words\n").is_err());
        assert!(parse("= 3\n").is_err());
        let dup = parse("a = 1\na = 2\n").unwrap_err().to_string();
        assert!(dup.contains("already set"), "{dup}");
        let c = parse("a = x\n").unwrap();
        assert!(c.get::<u32>("a", 0).is_err());
    }

    #[test]
    fn unknown_key_is_named() {
        let c = parse("data.classes = 4\ntrain.epoch = 3\n").unwrap();
        let e = c
            .check_keys(&["data.classes", "train.epochs"])
            .unwrap_err()
            .to_string();
        assert!(e.contains("unknown key 'train.epoch'"), "{e}");
        assert!(e.contains(":2:"), "{e}");
    }
}
