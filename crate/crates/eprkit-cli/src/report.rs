use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::errors::{CliError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::data(&format!("cannot read {}", path.display()), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: format!("{:x}", hasher.finalize()),
    })
}

/// Run provenance written next to every command's outputs. The timestamp is
/// confined to `metadata` so all data files stay byte-identical across
/// reruns with the same inputs.
#[derive(Debug, Serialize)]
pub struct RunRecord<C: Serialize> {
    pub command: String,
    pub settings: C,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub metadata: RunMetadata,
}

#[derive(Debug, Serialize)]
pub struct RunMetadata {
    pub timestamp_unix: u64,
    pub version: String,
}

impl<C: Serialize> RunRecord<C> {
    pub fn new(command: &str, settings: C, inputs: Vec<InputDigest>) -> RunRecord<C> {
        RunRecord {
            command: command.to_string(),
            settings,
            inputs,
            outputs: Vec::new(),
            metadata: RunMetadata {
                timestamp_unix: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
        }
    }
}

/// Serializes `value` as pretty JSON and writes it under `out_dir`.
pub fn write_json<T: Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = out_dir.join(name);
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::data(&format!("serializing {name}"), e))?;
    std::fs::write(&path, text + "\n")
        .map_err(|e| CliError::data(&format!("writing {}", path.display()), e))?;
    Ok(path)
}

pub fn write_text(out_dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = out_dir.join(name);
    std::fs::write(&path, text)
        .map_err(|e| CliError::data(&format!("writing {}", path.display()), e))?;
    Ok(path)
}

pub fn ensure_out_dir(out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::config(&format!("cannot create {}", out_dir.display()), e))
}

/// Full fit report: parameter table, per-peak assignment, and provenance.
#[derive(Debug, Serialize)]
pub struct FitReport {
    pub parameters: Vec<ParameterRow>,
    pub chi2: f64,
    pub residual_rms_mhz: f64,
    pub iterations: usize,
    pub converged: bool,
    pub sign_ambiguous: bool,
    pub misalignment_deg: f64,
    pub assignments: Vec<AssignmentRow>,
    pub flagged_peaks: Vec<usize>,
    pub fitted_system: eprkit::SpinSystem,
    pub initial_system: eprkit::SpinSystem,
    pub inputs: Vec<InputDigest>,
}

#[derive(Debug, Serialize)]
pub struct ParameterRow {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
    pub unit: String,
}

#[derive(Debug, Serialize)]
pub struct AssignmentRow {
    pub peak_index: usize,
    pub measured_mhz: f64,
    /// Sorted-level indices of the assigned transition, when one was found
    /// inside the matching gate.
    pub lower: Option<usize>,
    pub upper: Option<usize>,
    pub predicted_mhz: Option<f64>,
    pub residual_mhz: Option<f64>,
    /// True when the residual is large against the line width, marking a
    /// misfit line worth inspecting.
    pub flagged: bool,
}

pub fn parameter_unit(name: &str) -> &'static str {
    if name.starts_with('g') {
        ""
    } else if name.ends_with("_deg") {
        "deg"
    } else {
        "MHz"
    }
}
