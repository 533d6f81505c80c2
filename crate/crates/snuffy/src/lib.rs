//! IO, file formats and the experiment runner for [`snuffy_core`].
//!
//! * [`archive`]: flat `f64` tensor archives with a JSON manifest.
//! * [`dataio`]: MIL CSV files and per-bag embedding directories.
//! * [`model`]: a model enum covering Snuffy and the pooling baselines, and
//!   checkpoints built on archives.
//! * [`experiments`]: parallel concentration simulation, layer grids and the
//!   cross-validation protocol.
//! * [`config`]: the TOML run configuration.
//! * [`run`]: run directories with config copy, version and output manifest.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

pub mod archive;
pub mod config;
pub mod dataio;
mod error;
pub mod experiments;
pub mod formats;
pub mod model;
pub mod run;

pub use crate::error::{Error, Result};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "not a file path"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    let unique = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    tmp_name.push(format!(".tmp{}-{unique}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|()| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}
