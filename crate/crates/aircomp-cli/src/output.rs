//! Deterministic output writing: CSV cells via the shortest round-trip float
//! format, non-finite values as "inf"/"-inf" and empty cells for NaN, plus
//! the run manifest that pins config, seed and versions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// CSV cell for a float: NaN becomes an empty cell.
pub fn cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub struct CsvWriter {
    buffer: String,
    columns: usize,
    path: PathBuf,
}

impl CsvWriter {
    pub fn create(path: PathBuf, header: &[&str]) -> Self {
        let mut buffer = String::new();
        let _ = writeln!(buffer, "{}", header.join(","));
        Self { buffer, columns: header.len(), path }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "row width disagrees with header");
        let _ = writeln!(self.buffer, "{}", cells.join(","));
    }

    pub fn finish(self) -> Result<PathBuf, CliError> {
        fs::write(&self.path, self.buffer.as_bytes())
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", self.path.display())))?;
        Ok(self.path)
    }
}

pub fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<PathBuf, CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))?;
    fs::write(&path, text.as_bytes())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

#[derive(Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub versions: Versions,
    pub outputs: Vec<String>,
}

#[derive(Serialize)]
pub struct Versions {
    pub aircomp_fl: &'static str,
    pub aircomp_cli: &'static str,
}

/// Write `manifest.json` next to the outputs. The hash covers the resolved
/// config serialization, so a manifest pins the exact experiment.
pub fn write_manifest<C: Serialize>(
    out_dir: &Path,
    command: &str,
    seed: Option<u64>,
    config: &C,
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let config_value = serde_json::to_value(config)
        .map_err(|e| CliError::Runtime(format!("config serialization failed: {e}")))?;
    let canonical = serde_json::to_string(&config_value)
        .map_err(|e| CliError::Runtime(format!("config serialization failed: {e}")))?;
    let digest = Sha256::digest(canonical.as_bytes());
    let manifest = Manifest {
        schema_version: 1,
        command: command.to_string(),
        seed,
        config: config_value,
        config_sha256: format!("{digest:x}"),
        versions: Versions {
            aircomp_fl: env!("CARGO_PKG_VERSION"),
            aircomp_cli: env!("CARGO_PKG_VERSION"),
        },
        outputs: outputs
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
    };
    write_json(out_dir.join("manifest.json"), &manifest)?;
    Ok(())
}
