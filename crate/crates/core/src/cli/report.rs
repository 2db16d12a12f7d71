use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{write_csv, Dataset};
use crate::error::{Error, Result};
use crate::sha256_hex;

/// Record of one command run. Identical manifests (wall clock aside) mean
/// identical outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: Vec<String>,
    pub seed: u64,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output file.
    pub outputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
}

/// Tracks inputs and outputs of a running command.
pub(super) struct Recorder {
    command: &'static str,
    flags: Vec<String>,
    seed: u64,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    start: Instant,
}

fn key(path: &Path) -> String {
    path.display().to_string()
}

impl Recorder {
    pub fn new(command: &'static str, flags: Vec<String>, seed: u64) -> Self {
        Self {
            command,
            flags,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        self.inputs.insert(key(path), sha256_hex(&bytes));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// CSV with a header and numeric rows; refuses non-finite values.
    pub fn table(&mut self, path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        for row in rows {
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    op: "output",
                    detail: format!("non-finite value {v} for {}", path.display()),
                });
            }
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        self.output(path);
        Ok(())
    }

    pub fn dataset(&mut self, path: &Path, data: &Dataset) -> Result<()> {
        write_csv(data, path)?;
        self.output(path);
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
        self.output(path);
        Ok(())
    }

    pub fn text(&mut self, path: &Path, text: &str) -> Result<()> {
        std::fs::write(path, text)?;
        self.output(path);
        Ok(())
    }

    /// Write `<primary>.manifest.json`.
    pub fn finish(self, primary: &Path) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            outputs.insert(key(p), sha256_hex(&std::fs::read(p)?));
        }
        let manifest = RunManifest {
            command: self.command.to_string(),
            flags: self.flags,
            seed: self.seed,
            inputs: self.inputs,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: self.start.elapsed().as_secs_f64(),
        };
        let mut path = primary.as_os_str().to_owned();
        path.push(".manifest.json");
        std::fs::write(PathBuf::from(path), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}
