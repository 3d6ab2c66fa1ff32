use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use gridmech::qp::{QpSettings, INTERIOR_TOL};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Provenance attached to every output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the resolved configuration, serialized as JSON.
    pub config_sha256: String,
    pub config: serde_json::Value,
    /// SHA-256 of every input file, keyed by role.
    pub inputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub started_at: String,
    pub wall_time_s: f64,
    pub solver: SolverInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub name: String,
    /// Feasibility and gap tolerance of the interior-point iterations.
    pub interior_tol: f64,
    /// Residual limits a solution must meet to be accepted.
    pub settings: QpSettings,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects inputs while a command runs and stamps the manifest at the end.
pub struct Recorder {
    command: String,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    started_at: String,
    start: Instant,
}

impl Recorder {
    pub fn new<C: Serialize>(command: &str, config: &C) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            start: Instant::now(),
        })
    }

    /// Read an input file and record its digest under `role`.
    pub fn read(&mut self, role: &str, path: &Path) -> Result<String> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(role.to_string(), sha256_hex(&bytes));
        String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))
    }

    /// Record a digest for an input read by other means.
    pub fn digest(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(role.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(&self) -> RunManifest {
        let config_text = serde_json::to_string(&self.config).unwrap_or_default();
        RunManifest {
            command: self.command.clone(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at.clone(),
            wall_time_s: self.start.elapsed().as_secs_f64(),
            solver: SolverInfo {
                name: "clarabel".into(),
                interior_tol: INTERIOR_TOL,
                settings: QpSettings::default(),
            },
        }
    }
}
