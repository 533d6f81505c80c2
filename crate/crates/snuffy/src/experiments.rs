//! Parallel drivers: concentration simulation, layer-count grids, the
//! k-fold × runs protocol and the synthetic needle-in-a-haystack comparison.
//!
//! Every unit of work (trial, grid cell, fold/run/model job) owns its random
//! stream, so results are identical to a sequential run and independent of
//! the thread count.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use snuffy_core::data::{kfold_plan, synth_generate, Dataset, FoldPlan, Normalizer, SynthConfig};
use snuffy_core::metrics::roc_auc;
use snuffy_core::patterns::{simulate_trial, ConcentrationParams, CouponStats};
use snuffy_core::rng::derive_seed;
use snuffy_core::training::{evaluate, predict_dataset, train, EvalReport, TrainConfig};

use crate::error::{Error, Result};
use crate::formats::{write_json, GridRow};
use crate::model::{AnyModel, ModelKind};

/// Same samples as [`snuffy_core::patterns::simulate_layer_concentration`],
/// computed on the rayon pool.
pub fn simulate_parallel(
    params: &ConcentrationParams,
    trials: usize,
    c_values: &[f64],
    seed: u64,
) -> Result<CouponStats> {
    params.validate()?;
    if trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    let samples: Vec<usize> = (0..trials as u64)
        .into_par_iter()
        .map(|t| simulate_trial(params, seed, t))
        .collect();
    Ok(CouponStats::from_samples(
        params.clone(),
        samples,
        c_values,
    )?)
}

/// Layer-count statistics for every `(n, λ_r)` pair, `n` outermost.
/// `λ_top` is clamped to `n`; cell `(n, λ_r)` uses the seed `(seed, n, λ_r)`.
pub fn layer_grid(
    ns: &[usize],
    lambda_rs: &[usize],
    lambda_top: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<GridRow>> {
    let cells: Vec<(usize, usize)> = ns
        .iter()
        .flat_map(|&n| lambda_rs.iter().map(move |&r| (n, r)))
        .collect();
    cells
        .par_iter()
        .map(|&(n, lambda_r)| {
            let params = ConcentrationParams::new(n, lambda_top.min(n), lambda_r);
            let cell_seed = derive_seed(seed, &[n as u64, lambda_r as u64]);
            params.validate()?;
            let samples: Vec<usize> = (0..trials as u64)
                .map(|t| simulate_trial(&params, cell_seed, t))
                .collect();
            let stats = CouponStats::from_samples(params, samples, &[])?;
            Ok(GridRow {
                n,
                lambda_r,
                mean_layers: stats.mean,
                std_layers: stats.std,
                min_layers: stats.min,
                max_layers: stats.max,
                center: stats.center,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    pub runs: usize,
    pub val_frac: f64,
    pub seed: u64,
    /// z-score with training-split statistics.
    pub normalize: bool,
    pub models: Vec<ModelKind>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 10,
            runs: 5,
            val_frac: 0.2,
            seed: 0,
            normalize: true,
            models: ModelKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub fold: usize,
    pub run: usize,
    pub model: ModelKind,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Number of values summarized.
    pub count: usize,
}

impl MeanStd {
    /// Sample standard deviation; `0` for a single value. `None` when empty.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelKind,
    pub acc: Option<MeanStd>,
    /// Over the folds whose test split holds both classes.
    pub auc: Option<MeanStd>,
    pub ece: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub dataset: String,
    pub k: usize,
    pub runs: usize,
    pub seed: u64,
    pub models: Vec<ModelSummary>,
    pub warnings: Vec<String>,
}

impl CvSummary {
    pub fn model(&self, kind: ModelKind) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.model == kind)
    }
}

/// Stratified holdout: `round(frac·count)` bags of each class go to the
/// second list. Both lists are sorted.
pub fn holdout_split(labels: &[u8], frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::Config(format!(
            "holdout fraction {frac} outside [0, 1)"
        )));
    }
    let mut r = snuffy_core::rng::stream(seed, &[0x401D]);
    let (mut keep, mut held) = (Vec::new(), Vec::new());
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut r);
        let n_held = (frac * idx.len() as f64).round() as usize;
        held.extend_from_slice(&idx[..n_held]);
        keep.extend_from_slice(&idx[n_held..]);
    }
    keep.sort_unstable();
    held.sort_unstable();
    Ok((keep, held))
}

/// Train/val/test datasets of one fold, normalized with training statistics
/// when requested.
pub fn fold_datasets(
    ds: &Dataset,
    plan: &FoldPlan,
    fold: usize,
    normalize: bool,
) -> Result<[Dataset; 3]> {
    let f = plan
        .folds
        .get(fold)
        .ok_or_else(|| Error::Config(format!("fold {fold} out of range")))?;
    let split = |idx: &[usize], tag: &str| {
        let mut s = ds.subset(idx);
        s.name = format!("{}-fold{fold}-{tag}", ds.name);
        s
    };
    let mut parts = [
        split(&f.train, "train"),
        split(&f.val, "val"),
        split(&f.test, "test"),
    ];
    if normalize {
        let norm = Normalizer::fit(&parts[0].bags)?;
        for p in &mut parts {
            *p = norm.apply(p);
        }
    }
    Ok(parts)
}

fn run_job(
    ds: &Dataset,
    plan: &FoldPlan,
    cv: &CvConfig,
    base: &TrainConfig,
    (fold, run, kind): (usize, usize, ModelKind),
) -> Result<CvRecord> {
    let [train_set, val_set, test_set] = fold_datasets(ds, plan, fold, cv.normalize)?;
    let seed = plan.run_seed(fold, run);
    let cfg = TrainConfig {
        seed,
        ..base.clone()
    };
    let model = AnyModel::init(kind, &cfg, ds.feature_dim, seed)?;
    let (model, history) = train(model, &train_set, &val_set, &cfg)?;
    let test = evaluate(&model, &test_set, derive_seed(seed, &[0xE7A1]))?;
    Ok(CvRecord {
        fold,
        run,
        model: kind,
        seed,
        best_epoch: history.best_epoch,
        epochs_run: history.epochs.len(),
        test,
    })
}

/// Runs every `(fold, run, model)` job in parallel. Records come back sorted
/// by `(fold, run, model)`. With `job_dir` set, each record is also written
/// atomically to `job_dir/fold{f}-run{r}-{model}.json` as soon as it finishes.
pub fn run_cv(
    ds: &Dataset,
    base: &TrainConfig,
    cv: &CvConfig,
    job_dir: Option<&Path>,
) -> Result<(Vec<CvRecord>, CvSummary)> {
    base.validate()?;
    if cv.models.is_empty() {
        return Err(Error::Config("no models selected".into()));
    }
    let plan = kfold_plan(&ds.labels(), cv.k, cv.runs, cv.val_frac, cv.seed)?;
    let mut jobs = Vec::with_capacity(cv.k * cv.runs * cv.models.len());
    for fold in 0..cv.k {
        for run in 0..cv.runs {
            for &kind in &cv.models {
                jobs.push((fold, run, kind));
            }
        }
    }
    let mut records: Vec<CvRecord> = jobs
        .par_iter()
        .map(|&job| {
            let rec = run_job(ds, &plan, cv, base, job)?;
            if let Some(dir) = job_dir {
                let name = format!("fold{}-run{}-{}.json", rec.fold, rec.run, rec.model.name());
                write_json(&dir.join(name), &rec)?;
            }
            Ok(rec)
        })
        .collect::<Result<_>>()?;
    records.sort_by_key(|r| (r.fold, r.run, r.model));
    let summary = summarize_cv(&ds.name, cv, &plan.warnings, &records);
    Ok((records, summary))
}

pub fn summarize_cv(
    dataset: &str,
    cv: &CvConfig,
    warnings: &[String],
    records: &[CvRecord],
) -> CvSummary {
    let models = cv
        .models
        .iter()
        .map(|&kind| {
            let mine: Vec<&CvRecord> = records.iter().filter(|r| r.model == kind).collect();
            let acc: Vec<f64> = mine.iter().map(|r| r.test.acc).collect();
            let auc: Vec<f64> = mine.iter().filter_map(|r| r.test.auc).collect();
            let ece: Vec<f64> = mine.iter().map(|r| r.test.ece).collect();
            ModelSummary {
                model: kind,
                acc: MeanStd::of(&acc),
                auc: MeanStd::of(&auc),
                ece: MeanStd::of(&ece),
            }
        })
        .collect();
    CvSummary {
        dataset: dataset.into(),
        k: cv.k,
        runs: cv.runs,
        seed: cv.seed,
        models,
        warnings: warnings.to_vec(),
    }
}

/// Synthetic comparison of Snuffy against mean pooling at a low witness rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeedleConfig {
    pub n_bags: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub dim: usize,
    pub witness_rate: f64,
    pub separation: f64,
    /// Stratified folds; fold 0 is the test set.
    pub test_folds: usize,
    /// Fraction of the non-test bags held out for early stopping.
    pub val_frac: f64,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl Default for NeedleConfig {
    fn default() -> Self {
        Self {
            n_bags: 200,
            k_min: 50,
            k_max: 100,
            dim: 8,
            witness_rate: 0.05,
            separation: 2.0,
            test_folds: 4,
            val_frac: 0.2,
            seeds: vec![0, 1, 2, 3, 4],
            train: TrainConfig {
                lr: 1e-2,
                epochs: 60,
                patience: 15,
                lambda_top: 5,
                lambda_r: 10,
                layers: 2,
                heads: 2,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleResult {
    pub seed: u64,
    pub snuffy_auc: f64,
    pub mean_pool_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleSummary {
    pub runs: Vec<NeedleResult>,
    pub mean_snuffy_auc: f64,
    pub mean_pool_auc: f64,
    pub mean_gap: f64,
}

/// Per seed: generate bags, hold out one stratified fold as a test set,
/// train both models on the rest and compare test AUC.
pub fn run_needle(cfg: &NeedleConfig) -> Result<NeedleSummary> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config(
            "needle experiment needs at least one seed".into(),
        ));
    }
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| needle_one(cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    let n = runs.len() as f64;
    let mean_snuffy_auc = runs.iter().map(|r| r.snuffy_auc).sum::<f64>() / n;
    let mean_pool_auc = runs.iter().map(|r| r.mean_pool_auc).sum::<f64>() / n;
    Ok(NeedleSummary {
        runs,
        mean_snuffy_auc,
        mean_pool_auc,
        mean_gap: mean_snuffy_auc - mean_pool_auc,
    })
}

fn needle_one(cfg: &NeedleConfig, seed: u64) -> Result<NeedleResult> {
    let ds = synth_generate(&SynthConfig {
        n_bags: cfg.n_bags,
        k_min: cfg.k_min,
        k_max: cfg.k_max,
        dim: cfg.dim,
        witness_rate: cfg.witness_rate,
        separation: cfg.separation,
        seed,
    })?;
    let plan = kfold_plan(
        &ds.labels(),
        cfg.test_folds,
        1,
        cfg.val_frac,
        derive_seed(seed, &[0x5917]),
    )?;
    let [train_set, val_set, test_set] = fold_datasets(&ds, &plan, 0, true)?;
    let auc_of = |kind: ModelKind| -> Result<f64> {
        let tcfg = TrainConfig {
            seed: derive_seed(seed, &[0x7EA1]),
            ..cfg.train.clone()
        };
        let model = AnyModel::init(kind, &tcfg, ds.feature_dim, tcfg.seed)?;
        let (model, _) = train(model, &train_set, &val_set, &tcfg)?;
        let preds = predict_dataset(&model, &test_set, derive_seed(seed, &[0xE7A1]))?;
        let scores: Vec<f64> = preds.iter().map(|p| p.bag_prob).collect();
        roc_auc(&scores, &test_set.labels())
            .ok_or_else(|| Error::Config("needle test split holds a single class".into()))
    };
    Ok(NeedleResult {
        seed,
        snuffy_auc: auc_of(ModelKind::Snuffy)?,
        mean_pool_auc: auc_of(ModelKind::MeanPool)?,
    })
}
