use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{adamw_step, evaluate, AdamWConfig, AdamWState, MilModel};
use crate::data::Dataset;
use crate::error::{contract, domain, Error, Result};
use crate::pooling::{eval_bag_seed, SnuffyHyper};
use crate::rng;

const SHUFFLE_STREAM: u64 = 0x5348;
const FORWARD_STREAM: u64 = 0x4657;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub epochs: usize,
    pub patience: usize,
    pub lambda_top: usize,
    pub lambda_r: usize,
    #[cfg_attr(feature = "serde", serde(rename = "L"))]
    pub layers: usize,
    pub heads: usize,
    /// `0` takes the feature dimension of the data.
    pub d_model: usize,
    /// `0` means `4·d_model`.
    pub d_ff: usize,
    pub seed: u64,
    pub scale_attention: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            weight_decay: 0.05,
            betas: (0.5, 0.9),
            epochs: 200,
            patience: 20,
            lambda_top: 200,
            lambda_r: 700,
            layers: 5,
            heads: 2,
            d_model: 0,
            d_ff: 0,
            seed: 0,
            scale_attention: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return Err(domain!("betas must lie in (0, 1), got ({b1}, {b2})"));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(domain!("lr must be positive, got {}", self.lr));
        }
        if self.patience == 0 {
            return Err(domain!("patience must be at least 1"));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(domain!("weight decay must be non-negative"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            betas: self.betas,
            weight_decay: self.weight_decay,
            eps: 1e-8,
        }
    }

    /// Architecture for inputs of dimension `feature_dim`.
    pub fn hyper(&self, feature_dim: usize) -> Result<SnuffyHyper> {
        let d_model = if self.d_model == 0 {
            feature_dim
        } else {
            self.d_model
        };
        if d_model != feature_dim {
            return Err(contract!(
                "d_model {d_model} differs from the feature dimension {feature_dim}"
            ));
        }
        let mut h = SnuffyHyper::new(
            d_model,
            self.lambda_top,
            self.lambda_r,
            self.layers,
            self.heads,
        );
        if self.d_ff != 0 {
            h.d_ff = self.d_ff;
        }
        h.scale_attention = self.scale_attention;
        h.validate()?;
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: Option<f64>,
    pub val_loss: f64,
    /// Set on the epoch after which training stopped early.
    pub stopped: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// One AdamW step on one bag; returns the bag loss before the step.
pub fn train_step<M: MilModel>(
    model: &mut M,
    x: &crate::linalg::Matrix,
    label: u8,
    seed: u64,
    state: &mut AdamWState,
    opt: &AdamWConfig,
) -> Result<f64> {
    let (loss, grads) = model.loss_and_grad(x, label, seed)?;
    grads.check_finite()?;
    adamw_step(model, &grads, state, opt)?;
    Ok(loss)
}

fn mean_loss<M: MilModel>(model: &M, ds: &Dataset, eval_seed: u64) -> Result<f64> {
    // summed in id order so the result does not depend on bag positions
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| ds.bags[a].id.cmp(&ds.bags[b].id));
    let mut total = 0.0;
    for i in order {
        let b = &ds.bags[i];
        total += model.loss(&b.features, b.label, eval_bag_seed(eval_seed, &b.id))?;
    }
    Ok(total / ds.len() as f64)
}

/// Per-bag AdamW over shuffled epochs with early stopping on validation AUC
/// (ties broken by lower validation loss). The best model is returned.
///
/// Visiting order and per-step randomness depend on bag ids, not on their
/// position in `train_set`. An empty `val_set` monitors the training set.
pub fn train<M: MilModel>(
    mut model: M,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(M, History)> {
    if train_set.is_empty() {
        return Err(contract!("training set is empty"));
    }
    let opt = cfg.optimizer();
    if cfg.patience == 0 {
        return Err(domain!("patience must be at least 1"));
    }
    opt.validate()?;
    let monitor = if val_set.is_empty() {
        train_set
    } else {
        val_set
    };
    let mut canonical: Vec<usize> = (0..train_set.len()).collect();
    canonical.sort_by(|&a, &b| train_set.bags[a].id.cmp(&train_set.bags[b].id));

    let mut state = AdamWState::new(&model);
    let mut history = History::default();
    let mut best: Option<(f64, f64, M)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let mut order = canonical.clone();
        order.shuffle(&mut rng::stream(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let mut total = 0.0;
        for &i in &order {
            let bag = &train_set.bags[i];
            let seed = rng::derive_seed(
                cfg.seed,
                &[FORWARD_STREAM, epoch as u64, rng::label_key(&bag.id)],
            );
            let loss = train_step(&mut model, &bag.features, bag.label, seed, &mut state, &opt)
                .map_err(|e| match e {
                    Error::Numeric(msg) => {
                        Error::Numeric(format!("epoch {epoch}, bag {}: {msg}", bag.id))
                    }
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {epoch}, bag {}: non-finite loss",
                    bag.id
                )));
            }
            total += loss;
        }
        let report = evaluate(&model, monitor, cfg.seed)?;
        let val_loss = mean_loss(&model, monitor, cfg.seed)?;
        let auc_key = report.auc.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((a, l, _)) => auc_key > *a || (auc_key == *a && val_loss < *l),
        };
        if improved {
            best = Some((auc_key, val_loss, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let stopped = since_best >= cfg.patience;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_auc: report.auc,
            val_loss,
            stopped,
        });
        if stopped {
            break;
        }
    }
    let model = best.map_or(model, |(_, _, m)| m);
    Ok((model, history))
}
