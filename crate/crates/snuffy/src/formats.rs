//! JSON documents and CSV tables written by the experiment runner.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use snuffy_core::patterns::{CouponStats, PatternSet, TailFraction};
use snuffy_core::pooling::BagOutput;
use snuffy_core::training::History;

use crate::error::{Error, Result};
use crate::experiments::{CvRecord, CvSummary};
use crate::write_atomic;

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, format!("serialization failed: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDoc {
    pub l: usize,
    pub random_set: Vec<usize>,
}

/// `{n, L, lambda_top, top_set, layers: [{l, random_set}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternDoc {
    pub n: usize,
    #[serde(rename = "L")]
    pub layers_count: usize,
    pub lambda_top: usize,
    pub top_set: Vec<usize>,
    pub layers: Vec<LayerDoc>,
}

impl From<&PatternSet> for PatternDoc {
    fn from(ps: &PatternSet) -> Self {
        Self {
            n: ps.n(),
            layers_count: ps.num_layers(),
            lambda_top: ps.top_set().len(),
            top_set: ps.top_set().to_vec(),
            layers: ps
                .layers()
                .iter()
                .map(|l| LayerDoc {
                    l: l.layer,
                    random_set: l.random_set.clone(),
                })
                .collect(),
        }
    }
}

impl PatternDoc {
    pub fn to_pattern_set(&self) -> snuffy_core::Result<PatternSet> {
        if self.layers.len() != self.layers_count || self.top_set.len() != self.lambda_top {
            return Err(snuffy_core::Error::Contract(
                "pattern document counts disagree with its lists".into(),
            ));
        }
        if self.layers.iter().enumerate().any(|(i, l)| l.l != i) {
            return Err(snuffy_core::Error::Contract(
                "pattern layers must be numbered 0, 1, ...".into(),
            ));
        }
        PatternSet::from_parts(
            self.n,
            self.top_set.clone(),
            self.layers.iter().map(|l| l.random_set.clone()).collect(),
        )
    }
}

/// Per-bag report entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagReport {
    pub bag_id: String,
    pub label: u8,
    pub bag_prob: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_branch_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attn_branch_prob: Option<f64>,
    pub instance_probs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_set: Option<Vec<usize>>,
}

impl BagReport {
    pub fn from_output(bag_id: &str, label: u8, out: &BagOutput) -> Self {
        Self {
            bag_id: bag_id.into(),
            label,
            bag_prob: out.bag_prob,
            max_branch_prob: Some(out.max_branch_prob),
            attn_branch_prob: Some(out.attn_branch_prob),
            instance_probs: out.instance_probs.clone(),
            top_set: Some(out.top_set.clone()),
        }
    }
}

/// `{bag_id: label}`.
pub type LabelsManifest = BTreeMap<String, u8>;

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn finish_csv(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<()> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::format(path, format!("csv flush failed: {e}")))?;
    write_atomic(path, &bytes)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, format!("csv write failed: {e}"))
}

/// `epoch,train_loss,val_auc,stopped_flag`; an undefined AUC is written as `NA`.
pub fn write_history_csv(path: &Path, history: &History) -> Result<()> {
    let mut w = csv_writer();
    w.write_record(["epoch", "train_loss", "val_auc", "stopped_flag"])
        .map_err(|e| csv_err(path, e))?;
    for r in &history.epochs {
        let auc = r
            .val_auc
            .map_or_else(|| "NA".to_string(), |a| a.to_string());
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            auc,
            u8::from(r.stopped).to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish_csv(path, w)
}

/// `trial,L`.
pub fn write_trials_csv(path: &Path, samples: &[usize]) -> Result<()> {
    let mut w = csv_writer();
    w.write_record(["trial", "L"])
        .map_err(|e| csv_err(path, e))?;
    for (t, s) in samples.iter().enumerate() {
        w.write_record([t.to_string(), s.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    finish_csv(path, w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub n: usize,
    pub lambda_top: usize,
    pub lambda_r: usize,
    pub coverage_target: usize,
    pub count_top: bool,
    pub trials: usize,
    pub seed: u64,
    pub mean: f64,
    pub std: f64,
    pub min: usize,
    pub max: usize,
    pub center: f64,
    pub sigma_bound: f64,
    pub sigma_baum: f64,
    pub tails: Vec<TailFraction>,
}

impl SimulationSummary {
    pub fn new(stats: &CouponStats, seed: u64) -> Self {
        Self {
            n: stats.params.n,
            lambda_top: stats.params.lambda_top,
            lambda_r: stats.params.lambda_r,
            coverage_target: stats.params.coverage_target,
            count_top: stats.params.count_top,
            trials: stats.samples.len(),
            seed,
            mean: stats.mean,
            std: stats.std,
            min: stats.min,
            max: stats.max,
            center: stats.center,
            sigma_bound: stats.sigma_bound,
            sigma_baum: stats.sigma_baum,
            tails: stats.tails.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub n: usize,
    pub lambda_r: usize,
    pub mean_layers: f64,
    pub std_layers: f64,
    pub min_layers: usize,
    pub max_layers: usize,
    pub center: f64,
}

/// `n,lambda_r,mean_layers,std_layers,min_layers,max_layers,center`.
pub fn write_grid_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut w = csv_writer();
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    finish_csv(path, w)
}

fn na_or(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |a| a.to_string())
}

/// `fold,run,model,acc,auc,ece,best_epoch,epochs_run`, one row per job.
pub fn write_cv_records_csv(path: &Path, records: &[CvRecord]) -> Result<()> {
    let mut w = csv_writer();
    w.write_record([
        "fold",
        "run",
        "model",
        "acc",
        "auc",
        "ece",
        "best_epoch",
        "epochs_run",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([
            r.fold.to_string(),
            r.run.to_string(),
            r.model.name().to_string(),
            r.test.acc.to_string(),
            na_or(r.test.auc),
            r.test.ece.to_string(),
            r.best_epoch.to_string(),
            r.epochs_run.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish_csv(path, w)
}

/// Mean and standard deviation per model and metric.
pub fn write_cv_table_csv(path: &Path, summary: &CvSummary) -> Result<()> {
    let mut w = csv_writer();
    w.write_record([
        "model", "acc_mean", "acc_std", "auc_mean", "auc_std", "ece_mean", "ece_std",
    ])
    .map_err(|e| csv_err(path, e))?;
    for m in &summary.models {
        let mut row = vec![m.model.name().to_string()];
        for s in [m.acc, m.auc, m.ece] {
            row.push(na_or(s.map(|s| s.mean)));
            row.push(na_or(s.map(|s| s.std)));
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    finish_csv(path, w)
}
