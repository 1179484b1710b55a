use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use panda_core::sim::SimDesign;
use panda_core::{Benchmark, TuneGrid};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::settings::Resolved;

/// Everything a command needs to run again, with all defaults filled in.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Fit { input: PathBuf, settings: Resolved },
    Trace { input: PathBuf, settings: Resolved },
    Infer { input: PathBuf, settings: Resolved, fit: Option<PathBuf> },
    Tune { input: PathBuf, settings: Resolved, grid: TuneGrid },
    Simulate { benchmark: Benchmark },
    EmitData { design: SimDesign, replicate: usize, path: PathBuf },
}

impl Invocation {
    pub fn input(&self) -> Option<&Path> {
        match self {
            Invocation::Fit { input, .. }
            | Invocation::Trace { input, .. }
            | Invocation::Infer { input, .. }
            | Invocation::Tune { input, .. } => Some(input),
            Invocation::Simulate { .. } | Invocation::EmitData { .. } => None,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Invocation::Fit { settings, .. }
            | Invocation::Trace { settings, .. }
            | Invocation::Infer { settings, .. }
            | Invocation::Tune { settings, .. } => settings.config.seed,
            Invocation::Simulate { benchmark } => benchmark.design.seed,
            Invocation::EmitData { design, .. } => design.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub invocation: Invocation,
    pub input_sha256: Option<String>,
    pub seed: u64,
    pub seed_drawn: bool,
    pub version: String,
    pub started: String,
    pub finished: String,
    /// Output file name (relative to the output directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(format!("malformed manifest {}: {e}", path.display())))
}
