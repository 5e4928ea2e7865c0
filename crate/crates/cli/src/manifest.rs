use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckVerdict {
    Pass,
    Fail,
    NotApplicable,
    NotEvaluated,
}

impl CheckVerdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            CheckVerdict::Pass
        } else {
            CheckVerdict::Fail
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub verdict: CheckVerdict,
    pub detail: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    /// Wall-clock seconds per stage. The only field that differs between
    /// two runs of the same configuration.
    pub timings: BTreeMap<String, f64>,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn failed(&self) -> bool {
        self.checks.iter().any(|c| c.verdict == CheckVerdict::Fail)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Output directory held under a lock file for the duration of a run.
pub struct OutDir {
    path: PathBuf,
    lock: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn open(path: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(path)?;
        let lock = path.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::Config(format!(
                    "{} is locked by another run (remove {} if stale)",
                    path.display(),
                    lock.display()
                )));
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Self { path: path.to_path_buf(), lock, files: Vec::new() })
    }

    /// Writes through a temporary file and a rename.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.path.join(name), bytes)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn inventory(&self) -> Result<Vec<OutputFile>, CliError> {
        let mut names = self.files.clone();
        names.sort();
        names
            .into_iter()
            .map(|file| {
                let bytes = fs::read(self.path.join(&file))?;
                Ok(OutputFile { bytes: bytes.len() as u64, sha256: sha256_hex(&bytes), file })
            })
            .collect()
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
