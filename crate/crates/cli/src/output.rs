//! Output directories that only appear once complete.
//!
//! Files are written to a hidden staging directory next to the target. On
//! success the staging directory replaces the target; on failure it is moved
//! to `<target>.quarantine` so partial results can be inspected.

use std::fs;
use std::path::{Path, PathBuf};

use crate::manifest::{sha256_hex, Manifest, MANIFEST_FILE};
use crate::CliError;

pub struct OutputDir {
    target: PathBuf,
    staging: PathBuf,
    artifacts: Vec<(String, String)>,
}

fn sibling(target: &Path, prefix: &str, suffix: &str) -> PathBuf {
    let name = target
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_owned());
    target.with_file_name(format!("{prefix}{name}{suffix}"))
}

impl OutputDir {
    /// Refuses a target that exists and is not a previous run.
    pub fn create(target: &Path) -> Result<Self, CliError> {
        if target.exists() {
            let is_run = target.join(MANIFEST_FILE).is_file();
            let empty = fs::read_dir(target)
                .map_err(|e| CliError::io(target, e))?
                .next()
                .is_none();
            if !is_run && !empty {
                return Err(CliError::Config(format!(
                    "output directory {} exists and holds no previous run",
                    target.display()
                )));
            }
        }
        if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let staging = sibling(target, ".", ".staging");
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
        Ok(OutputDir {
            target: target.to_owned(),
            staging,
            artifacts: Vec::new(),
        })
    }

    /// Write `bytes` at `rel` and record its hash.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.staging.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push((rel.to_owned(), sha256_hex(bytes)));
        Ok(())
    }

    /// Append the artifact hashes to `manifest`, write it and move the
    /// staging directory into place.
    pub fn commit(self, mut manifest: Manifest) -> Result<PathBuf, CliError> {
        for (rel, hash) in &self.artifacts {
            manifest.push(format!("artifact.{rel}"), hash);
        }
        let path = self.staging.join(MANIFEST_FILE);
        fs::write(&path, manifest.render()).map_err(|e| CliError::io(&path, e))?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| CliError::io(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| CliError::io(&self.target, e))?;
        Ok(self.target)
    }

    /// Move whatever was written to `<target>.quarantine`.
    pub fn quarantine(self) -> Option<PathBuf> {
        let q = sibling(&self.target, "", ".quarantine");
        if q.exists() && fs::remove_dir_all(&q).is_err() {
            return None;
        }
        fs::rename(&self.staging, &q).ok().map(|_| q)
    }
}
