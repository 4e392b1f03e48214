//! Run manifests: ordered `key=value` lines, one per entry.
//!
//! Keys used by the runner:
//!
//! - `command`: `run` or `bounds`;
//! - `config.<key>`: the resolved configuration, defaults included;
//! - `data_config_hash`: SHA-256 of the resolved `data.*` entries;
//! - `result.<seed>.<method>.last_window_acc` (runs only);
//! - `artifact.<relative path>`: SHA-256 of each written file.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Entries whose key starts with `prefix`, with the prefix removed.
    pub fn with_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries
            .iter()
            .filter_map(move |(k, v)| k.strip_prefix(prefix).map(|rest| (rest, v.as_str())))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Manifest(format!("line {}: missing '='", i + 1)))?;
            entries.push((k.to_owned(), v.to_owned()));
        }
        Ok(Manifest { entries })
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Self::parse(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))
    }
}

/// Hash of the `data.*` part of a resolved configuration.
pub fn data_config_hash(resolved: &[(String, String)]) -> String {
    let mut canon = String::new();
    for (k, v) in resolved.iter().filter(|(k, _)| k.starts_with("data.")) {
        canon.push_str(k);
        canon.push('=');
        canon.push_str(v);
        canon.push('\n');
    }
    sha256_hex(canon.as_bytes())
}

/// Re-hash every recorded artifact under `dir`. Returns the number checked.
pub fn verify(dir: &Path) -> Result<usize, CliError> {
    let manifest = Manifest::read(dir)?;
    let mut checked = 0;
    let mut bad = Vec::new();
    for (rel, want) in manifest.with_prefix("artifact.") {
        let path = dir.join(rel);
        match std::fs::read(&path) {
            Ok(bytes) if sha256_hex(&bytes) == want => {}
            Ok(_) => bad.push(format!("{rel} (hash mismatch)")),
            Err(_) => bad.push(format!("{rel} (missing)")),
        }
        checked += 1;
    }
    if checked == 0 {
        return Err(CliError::Verify(format!(
            "{}: manifest lists no artifacts",
            dir.display()
        )));
    }
    if !bad.is_empty() {
        return Err(CliError::Verify(format!(
            "{} of {checked} artifacts failed: {}",
            bad.len(),
            bad.join(", ")
        )));
    }
    Ok(checked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn render_parse_round_trip() {
        let mut m = Manifest::new();
        m.push("command", "run");
        m.push("config.train.hidden", "64,64");
        m.push("artifact.seed_1/x.csv", "00ff");
        let back = Manifest::parse(&m.render()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get("config.train.hidden"), Some("64,64"));
        assert_eq!(
            back.with_prefix("artifact.").collect::<Vec<_>>(),
            vec![("seed_1/x.csv", "00ff")]
        );
        assert!(Manifest::parse("no equals sign\n").is_err());
    }

    #[test]
    fn data_hash_ignores_other_sections() {
        let a = vec![
            ("data.dim".to_owned(), "16".to_owned()),
            ("noise.rate".to_owned(), "0.2".to_owned()),
        ];
        let b = vec![
            ("data.dim".to_owned(), "16".to_owned()),
            ("noise.rate".to_owned(), "0.4".to_owned()),
        ];
        let c = vec![("data.dim".to_owned(), "8".to_owned())];
        assert_eq!(data_config_hash(&a), data_config_hash(&b));
        assert_ne!(data_config_hash(&a), data_config_hash(&c));
    }
}
