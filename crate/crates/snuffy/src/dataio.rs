//! Dataset loaders and writers.
//!
//! * MIL CSV: header `bag_id,instance_id,label[,instance_label],f0,...,f{d-1}`,
//!   one row per instance. `label` is the bag label and must be constant
//!   within a bag.
//! * Embedding directories: `labels.json` (`{bag_id: label}`) plus one tensor
//!   archive per bag named after the bag id, holding `features` (`d × k`) and
//!   optionally `instance_labels` (`1 × k`).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use snuffy_core::data::{Bag, Dataset};
use snuffy_core::Matrix;

use crate::archive::{read_archive, write_archive, TensorArchive};
use crate::error::{Error, Result};
use crate::formats::{read_json, write_json, LabelsManifest};
use crate::write_atomic;

pub const LABELS_FILE: &str = "labels.json";
const INSTANCE_LABEL_COLUMN: &str = "instance_label";

struct PendingBag {
    id: String,
    label: u8,
    columns: Vec<Vec<f64>>,
    instance_labels: Vec<u8>,
    seen: HashSet<String>,
}

fn parse_label(path: &Path, line: u64, field: &str, what: &str) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Parse {
            path: path.into(),
            line,
            message: format!("{what} must be 0 or 1, got {other:?}"),
        }),
    }
}

pub fn load_mil_csv(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned());
    parse_mil_csv(&bytes, path, &name)
}

/// Parses MIL CSV text; `path` only labels error messages.
pub fn parse_mil_csv(bytes: &[u8], path: &Path, name: &str) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
        return Err(parse_err(1, "empty file: missing header".into()));
    }
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 3 || cols[..3] != ["bag_id", "instance_id", "label"] {
        return Err(parse_err(
            1,
            "header must start with bag_id,instance_id,label".into(),
        ));
    }
    let has_instance_labels = cols.get(3) == Some(&INSTANCE_LABEL_COLUMN);
    let first_feature = if has_instance_labels { 4 } else { 3 };
    let d = cols.len() - first_feature;
    if d == 0 {
        return Err(parse_err(1, "no feature columns".into()));
    }

    let mut bags: Vec<PendingBag> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != cols.len() {
            return Err(parse_err(
                line,
                format!(
                    "ragged row: {} fields, header has {}",
                    record.len(),
                    cols.len()
                ),
            ));
        }
        let bag_id = record[0].trim();
        if bag_id.is_empty() {
            return Err(parse_err(line, "empty bag_id".into()));
        }
        let label = parse_label(path, line, &record[2], "label")?;
        let slot = *index.entry(bag_id.to_string()).or_insert_with(|| {
            bags.push(PendingBag {
                id: bag_id.to_string(),
                label,
                columns: Vec::new(),
                instance_labels: Vec::new(),
                seen: HashSet::new(),
            });
            bags.len() - 1
        });
        let bag = &mut bags[slot];
        if bag.label != label {
            return Err(parse_err(
                line,
                format!("bag {bag_id} has conflicting labels"),
            ));
        }
        let instance_id = record[1].trim().to_string();
        if !bag.seen.insert(instance_id.clone()) {
            return Err(parse_err(
                line,
                format!("duplicate instance {instance_id} in bag {bag_id}"),
            ));
        }
        if has_instance_labels {
            bag.instance_labels
                .push(parse_label(path, line, &record[3], "instance_label")?);
        }
        let mut column = Vec::with_capacity(d);
        for (j, field) in record.iter().skip(first_feature).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(
                    line,
                    format!(
                        "feature {} is not a number: {field:?}",
                        cols[first_feature + j]
                    ),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    line,
                    format!("feature {} is not finite", cols[first_feature + j]),
                ));
            }
            column.push(v);
        }
        bag.columns.push(column);
    }
    if bags.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    let bags = bags
        .into_iter()
        .map(|b| {
            let features = Matrix::from_columns(&b.columns)?;
            let inst = has_instance_labels.then_some(b.instance_labels);
            Bag::new(b.id.clone(), features, b.label, inst)
                .map_err(|e| Error::format(path, format!("bag {}: {e}", b.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(name, bags)?)
}

/// Writes `ds` as MIL CSV. Values use the shortest round-trip decimal form,
/// so [`load_mil_csv`] restores them bit for bit.
pub fn save_mil_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let with_instances = ds.bags.iter().all(|b| b.instance_labels.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "bag_id".to_string(),
        "instance_id".to_string(),
        "label".to_string(),
    ];
    if with_instances {
        header.push(INSTANCE_LABEL_COLUMN.into());
    }
    header.extend((0..ds.feature_dim).map(|j| format!("f{j}")));
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for b in &ds.bags {
        for k in 0..b.len() {
            let mut row = vec![b.id.clone(), k.to_string(), b.label.to_string()];
            if let (true, Some(l)) = (with_instances, &b.instance_labels) {
                row.push(l[k].to_string());
            }
            row.extend(b.features.col(k).iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

fn check_stem(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id != "labels"
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub fn save_embeddings_dir(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut labels = LabelsManifest::new();
    for b in &ds.bags {
        if !check_stem(&b.id) {
            return Err(Error::format(
                dir,
                format!("bag id {:?} is not usable as a file name", b.id),
            ));
        }
        let mut tensors = vec![("features".to_string(), b.features.clone())];
        if let Some(l) = &b.instance_labels {
            let row: Vec<f64> = l.iter().map(|&v| f64::from(v)).collect();
            tensors.push((
                "instance_labels".into(),
                Matrix::from_col_major(1, row.len(), row)?,
            ));
        }
        write_archive(
            dir,
            &b.id,
            &TensorArchive {
                tensors,
                meta: serde_json::Value::Null,
            },
        )?;
        labels.insert(b.id.clone(), b.label);
    }
    write_json(&dir.join(LABELS_FILE), &labels)
}

pub fn load_embeddings_dir(dir: &Path) -> Result<Dataset> {
    let labels: LabelsManifest = read_json(&dir.join(LABELS_FILE))?;
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let file = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = file.strip_suffix(".json") {
            if file != LABELS_FILE && !labels.contains_key(stem) {
                return Err(Error::format(
                    dir,
                    format!("bag {stem} has an archive but no entry in {LABELS_FILE}"),
                ));
            }
        }
    }
    let mut bags = Vec::with_capacity(labels.len());
    let mut dim = None;
    for (id, &label) in &labels {
        if !check_stem(id) || !dir.join(format!("{id}.json")).is_file() {
            return Err(Error::format(
                dir,
                format!("bag {id} is listed in {LABELS_FILE} but has no archive"),
            ));
        }
        let archive = read_archive(dir, id)?;
        let features = archive
            .get("features")
            .ok_or_else(|| Error::format(dir, format!("bag {id}: archive lacks `features`")))?
            .clone();
        if *dim.get_or_insert(features.rows()) != features.rows() {
            return Err(Error::format(
                dir,
                format!(
                    "bag {id}: feature dimension {} differs from {}",
                    features.rows(),
                    dim.unwrap_or(0)
                ),
            ));
        }
        let inst = archive.get("instance_labels").map(|m| {
            m.as_slice()
                .iter()
                .map(|&v| u8::from(v != 0.0))
                .collect::<Vec<_>>()
        });
        let bag = Bag::new(id.clone(), features, label, inst)
            .map_err(|e| Error::format(dir, format!("bag {id}: {e}")))?;
        bags.push(bag);
    }
    if bags.is_empty() {
        return Err(Error::format(dir, format!("{LABELS_FILE} lists no bags")));
    }
    let name = dir
        .file_name()
        .map_or_else(|| "embeddings".into(), |s| s.to_string_lossy().into_owned());
    Ok(Dataset::new(name, bags)?)
}

/// A CSV file or an embedding directory, decided by the path.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if path.is_dir() {
        load_embeddings_dir(path)
    } else {
        load_mil_csv(path)
    }
}
