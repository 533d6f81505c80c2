//! Model selection and checkpoints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snuffy_core::data::Normalizer;
use snuffy_core::pooling::{PoolKind, PoolingBaseline, SnuffyHyper, SnuffyModel};
use snuffy_core::training::{GradientSet, MilModel, Parameterized, Prediction, TrainConfig};
use snuffy_core::Matrix;

use crate::archive::{read_archive, write_archive, TensorArchive};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Snuffy,
    MeanPool,
    MaxPool,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Snuffy, ModelKind::MeanPool, ModelKind::MaxPool];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Snuffy => "snuffy",
            ModelKind::MeanPool => "mean-pool",
            ModelKind::MaxPool => "max-pool",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model {s:?} (expected snuffy, mean-pool or max-pool)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Snuffy(SnuffyModel),
    Baseline(PoolingBaseline),
}

impl AnyModel {
    /// Fresh model for `feature_dim`-dimensional instances.
    pub fn init(kind: ModelKind, cfg: &TrainConfig, feature_dim: usize, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::Snuffy => {
                AnyModel::Snuffy(SnuffyModel::init(cfg.hyper(feature_dim)?, seed)?)
            }
            ModelKind::MeanPool => {
                AnyModel::Baseline(PoolingBaseline::init(PoolKind::Mean, feature_dim, seed))
            }
            ModelKind::MaxPool => {
                AnyModel::Baseline(PoolingBaseline::init(PoolKind::Max, feature_dim, seed))
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Snuffy(_) => ModelKind::Snuffy,
            AnyModel::Baseline(b) => match b.kind {
                PoolKind::Mean => ModelKind::MeanPool,
                PoolKind::Max => ModelKind::MaxPool,
            },
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            AnyModel::Snuffy(m) => m.hyper.d_model,
            AnyModel::Baseline(b) => b.classifier.dim(),
        }
    }
}

impl Parameterized for AnyModel {
    fn visit(&self, f: &mut dyn FnMut(String, &Matrix)) {
        match self {
            AnyModel::Snuffy(m) => m.visit(f),
            AnyModel::Baseline(b) => b.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix)) {
        match self {
            AnyModel::Snuffy(m) => m.visit_mut(f),
            AnyModel::Baseline(b) => b.visit_mut(f),
        }
    }
}

impl MilModel for AnyModel {
    fn predict(&self, x: &Matrix, seed: u64) -> snuffy_core::Result<Prediction> {
        match self {
            AnyModel::Snuffy(m) => m.predict(x, seed),
            AnyModel::Baseline(b) => b.predict(x, seed),
        }
    }

    fn loss(&self, x: &Matrix, label: u8, seed: u64) -> snuffy_core::Result<f64> {
        match self {
            AnyModel::Snuffy(m) => m.loss(x, label, seed),
            AnyModel::Baseline(b) => b.loss(x, label, seed),
        }
    }

    fn loss_and_grad(
        &self,
        x: &Matrix,
        label: u8,
        seed: u64,
    ) -> snuffy_core::Result<(f64, GradientSet)> {
        match self {
            AnyModel::Snuffy(m) => m.loss_and_grad(x, label, seed),
            AnyModel::Baseline(b) => b.loss_and_grad(x, label, seed),
        }
    }
}

/// Archive metadata of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<SnuffyHyper>,
    /// Statistics applied to inputs before the model sees them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalizer: Option<Normalizer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub normalizer: Option<Normalizer>,
}

pub fn save_checkpoint(dir: &Path, stem: &str, ck: &Checkpoint) -> Result<Vec<PathBuf>> {
    let meta = CheckpointMeta {
        kind: ck.model.kind(),
        feature_dim: ck.model.feature_dim(),
        hyper: match &ck.model {
            AnyModel::Snuffy(m) => Some(m.hyper),
            AnyModel::Baseline(_) => None,
        },
        normalizer: ck.normalizer.clone(),
    };
    let meta = serde_json::to_value(&meta)
        .map_err(|e| Error::format(dir, format!("checkpoint metadata: {e}")))?;
    write_archive(dir, stem, &TensorArchive::from_model(&ck.model, meta))
}

pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<Checkpoint> {
    let path = dir.join(format!("{stem}.json"));
    let archive = read_archive(dir, stem)?;
    let meta: CheckpointMeta = serde_json::from_value(archive.meta.clone())
        .map_err(|e| Error::format(&path, format!("checkpoint metadata: {e}")))?;
    let mut model = match meta.kind {
        ModelKind::Snuffy => {
            let hyper = meta
                .hyper
                .ok_or_else(|| Error::format(&path, "snuffy checkpoint without hyperparameters"))?;
            hyper.validate()?;
            AnyModel::Snuffy(SnuffyModel::zeros(hyper))
        }
        ModelKind::MeanPool => {
            AnyModel::Baseline(PoolingBaseline::init(PoolKind::Mean, meta.feature_dim, 0))
        }
        ModelKind::MaxPool => {
            AnyModel::Baseline(PoolingBaseline::init(PoolKind::Max, meta.feature_dim, 0))
        }
    };
    archive
        .load_into(&mut model)
        .map_err(|msg| Error::format(&path, msg))?;
    if let AnyModel::Snuffy(m) = &model {
        m.validate()?;
    }
    Ok(Checkpoint {
        model,
        normalizer: meta.normalizer,
    })
}
