//! Run directories: `config.toml` (the effective configuration), `VERSION`
//! and `manifest.json` listing every output with its size.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::write_json;
use crate::write_atomic;

/// Crate version plus `git describe` of the source tree at build time.
pub const VERSION: &str = env!("SNUFFY_BUILD_VERSION");

pub const CONFIG_FILE: &str = "config.toml";
pub const VERSION_FILE: &str = "VERSION";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub outputs: Vec<OutputEntry>,
}

#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    command: String,
    outputs: Vec<PathBuf>,
}

impl RunDir {
    /// Creates `root`, writing the config copy and the version file.
    pub fn create(root: &Path, command: &str, config: &RunConfig) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        write_atomic(&root.join(CONFIG_FILE), config.to_toml()?.as_bytes())?;
        write_atomic(&root.join(VERSION_FILE), format!("{VERSION}\n").as_bytes())?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.into(),
            outputs: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    /// Registers a file (absolute or relative to the run directory).
    pub fn record(&mut self, path: impl AsRef<Path>) {
        let p = path.as_ref();
        let p = p.strip_prefix(&self.root).unwrap_or(p).to_path_buf();
        if !self.outputs.contains(&p) {
            self.outputs.push(p);
        }
    }

    pub fn record_all<I: IntoIterator<Item = PathBuf>>(&mut self, paths: I) {
        for p in paths {
            self.record(p);
        }
    }

    /// Writes `manifest.json`, sorted by path.
    pub fn finish(self) -> Result<RunManifest> {
        let mut outputs = Vec::with_capacity(self.outputs.len() + 2);
        let mut all = self.outputs.clone();
        all.push(CONFIG_FILE.into());
        all.push(VERSION_FILE.into());
        all.sort();
        all.dedup();
        for rel in all {
            let full = self.root.join(&rel);
            let meta = fs::metadata(&full).map_err(|e| Error::io(&full, e))?;
            let path = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            outputs.push(OutputEntry {
                path,
                bytes: meta.len(),
            });
        }
        let manifest = RunManifest {
            version: VERSION.into(),
            command: self.command,
            outputs,
        };
        write_json(&self.root.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}
