//! Per-run manifest written into every output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Identifies a run. Holds nothing that varies between identical runs:
/// no timestamps, worker counts or output location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub corpus: PathBuf,
    pub network: PathBuf,
    pub weights: PathBuf,
    pub seed: u64,
    pub version: String,
    pub config: RunConfig,
    /// Files written by the run, relative to the output directory, sorted.
    pub outputs: Vec<String>,
}

impl RunManifest {
    /// The output directory is blanked out of the recorded config, so runs
    /// that differ only in where they write share a manifest.
    pub fn new(command: &str, config: &RunConfig) -> Self {
        let config = RunConfig {
            out: PathBuf::new(),
            ..config.clone()
        };
        RunManifest {
            command: command.to_string(),
            config_hash: config.hash(),
            corpus: config.corpus.clone(),
            network: config.network.clone(),
            weights: config.weights.clone(),
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Creates files below one output directory and remembers their names for
/// the manifest.
pub struct OutputDir {
    root: PathBuf,
    manifest: RunManifest,
}

impl OutputDir {
    /// Creates the directory and writes the manifest before anything else.
    pub fn create(root: &Path, manifest: RunManifest) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        manifest.write(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path for `rel`, creating parent directories and recording it.
    pub fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.manifest.outputs.push(rel.to_string());
        Ok(path)
    }

    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(rel)?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text)
    }

    /// Rewrites the manifest with the final output list.
    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.outputs.sort();
        self.manifest.outputs.dedup();
        self.manifest.write(&self.root)?;
        Ok(self.manifest)
    }
}
