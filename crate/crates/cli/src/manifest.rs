//! `manifest.txt`: one per output directory, everything needed to rerun.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use head::{Error, Result};

pub const FILE: &str = "manifest.txt";

pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_fingerprint(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(fingerprint(&bytes))
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Default)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub inputs: Vec<(String, String)>,
    pub artifacts: Vec<String>,
    pub config: Option<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            seed,
            ..Self::default()
        }
    }

    /// Records `path` under `label` together with its content hash.
    pub fn input(&mut self, label: &str, path: &Path) -> Result<()> {
        let hash = file_fingerprint(path)?;
        self.inputs.push((label.into(), format!("{} sha256:{hash}", path.display())));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "tool = head {}\ncommand = {}\nseed = {}\n",
            env!("CARGO_PKG_VERSION"),
            self.command,
            self.seed
        );
        for (k, v) in &self.inputs {
            out.push_str(&format!("input.{k} = {v}\n"));
        }
        for a in &self.artifacts {
            out.push_str(&format!("artifact = {a}\n"));
        }
        if let Some(c) = &self.config {
            for line in c.lines() {
                out.push_str(&format!("config.{line}\n"));
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE);
        fs::write(&path, self.to_text()).map_err(|e| io_error(&path, e))
    }
}
