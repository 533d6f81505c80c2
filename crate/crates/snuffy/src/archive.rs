//! Flat tensor archives: `<stem>.bin` holds every tensor as little-endian
//! `f64` in column-major order, `<stem>.json` lists `{name, shape, offset}`
//! with byte offsets into the binary file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snuffy_core::training::Parameterized;
use snuffy_core::Matrix;

use crate::error::{Error, Result};
use crate::write_atomic;

pub const DTYPE: &str = "f64-le";
pub const LAYOUT: &str = "column-major";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub dtype: String,
    pub layout: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorArchive {
    pub tensors: Vec<(String, Matrix)>,
    pub meta: serde_json::Value,
}

impl TensorArchive {
    pub fn from_model<P: Parameterized>(model: &P, meta: serde_json::Value) -> Self {
        let mut tensors = Vec::new();
        model.visit(&mut |name, m| tensors.push((name, m.clone())));
        Self { tensors, meta }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Copies the archived tensors into `model`, which must have the same
    /// names and shapes in the same order.
    pub fn load_into<P: Parameterized>(&self, model: &mut P) -> std::result::Result<(), String> {
        let mut i = 0;
        let mut err = None;
        model.visit_mut(&mut |name, m| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(i) {
                Some((n, t)) if *n == name && t.shape() == m.shape() => *m = t.clone(),
                Some((n, t)) => {
                    err = Some(format!(
                        "archived tensor {n} {:?} does not match {name} {:?}",
                        t.shape(),
                        m.shape()
                    ))
                }
                None => err = Some(format!("archive has no tensor {name}")),
            }
            i += 1;
        });
        match err {
            Some(e) => Err(e),
            None if i != self.tensors.len() => Err(format!(
                "archive holds {} tensors, model has {i}",
                self.tensors.len()
            )),
            None => Ok(()),
        }
    }
}

pub fn archive_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{stem}.json")),
        dir.join(format!("{stem}.bin")),
    )
}

pub fn write_archive(dir: &Path, stem: &str, archive: &TensorArchive) -> Result<Vec<PathBuf>> {
    let (json_path, bin_path) = archive_paths(dir, stem);
    let total: usize = archive
        .tensors
        .iter()
        .map(|(_, m)| m.as_slice().len())
        .sum();
    let mut bytes = Vec::with_capacity(total * 8);
    let mut entries = Vec::with_capacity(archive.tensors.len());
    for (name, m) in &archive.tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: [m.rows(), m.cols()],
            offset: bytes.len() as u64,
        });
        for v in m.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = ArchiveManifest {
        dtype: DTYPE.into(),
        layout: LAYOUT.into(),
        tensors: entries,
        meta: archive.meta.clone(),
    };
    write_atomic(&bin_path, &bytes)?;
    crate::formats::write_json(&json_path, &manifest)?;
    Ok(vec![json_path, bin_path])
}

pub fn read_archive(dir: &Path, stem: &str) -> Result<TensorArchive> {
    let (json_path, bin_path) = archive_paths(dir, stem);
    let manifest: ArchiveManifest = crate::formats::read_json(&json_path)?;
    if manifest.dtype != DTYPE || manifest.layout != LAYOUT {
        return Err(Error::format(
            &json_path,
            format!(
                "unsupported dtype/layout {}/{}",
                manifest.dtype, manifest.layout
            ),
        ));
    }
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let [rows, cols] = t.shape;
        let start = usize::try_from(t.offset)
            .map_err(|_| Error::format(&json_path, format!("offset of {} overflows", t.name)))?;
        let end = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(start))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                Error::format(
                    &bin_path,
                    format!("tensor {} extends past the end of the file", t.name),
                )
            })?;
        let data = bytes[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let m = Matrix::from_col_major(rows, cols, data).map_err(Error::Core)?;
        tensors.push((t.name.clone(), m));
    }
    Ok(TensorArchive {
        tensors,
        meta: manifest.meta,
    })
}
