//! Loss, reverse-mode gradients, AdamW and the training loop.
//!
//! Models plug into the trainer through [`Parameterized`] (named tensor
//! visitation) and [`MilModel`] (prediction, loss and gradient). Both the
//! Snuffy head and the mean/max pooling baselines implement them.

mod backward;
mod evaluate;
mod gradcheck;
mod optim;
mod trainer;

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};
use crate::linalg::{sigmoid, Matrix};
use crate::pooling::{snuffy_forward, PoolingBaseline, RandomSource, SnuffyModel};

pub use backward::{snuffy_backward, SnuffyGradients};
pub use evaluate::{evaluate, predict_dataset, report_from_predictions, EvalReport};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport, TensorCheck, FD_STEP};
pub use optim::{adamw_step, AdamWConfig, AdamWState};
pub use trainer::{train, train_step, EpochRecord, History, TrainConfig};

/// Probability clamp applied before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// `−[Y·ln θ + (1−Y)·ln(1−θ)]` with `θ` clamped to `[ε, 1−ε]`.
pub fn bag_loss(prob: f64, label: u8) -> f64 {
    let p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if label == 1 {
        -libm::log(p)
    } else {
        -libm::log(1.0 - p)
    }
}

/// `d bag_loss(σ(z), Y) / dz`; zero where the clamp is active.
pub(crate) fn bag_loss_logit_grad(z: f64, label: u8) -> f64 {
    let p = sigmoid(z);
    if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        p - f64::from(label)
    } else {
        0.0
    }
}

/// A model whose trainable state is a fixed, ordered list of named tensors.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(String, &Matrix));
    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix));

    /// Same structure with every tensor zeroed; used as a gradient buffer.
    fn zeros_like(&self) -> Self
    where
        Self: Sized + Clone,
    {
        let mut z = self.clone();
        z.visit_mut(&mut |_, m| m.fill(0.0));
        z
    }

    fn num_parameters(&self) -> usize {
        let mut count = 0;
        self.visit(&mut |_, m| count += m.as_slice().len());
        count
    }
}

impl Parameterized for SnuffyModel {
    fn visit(&self, f: &mut dyn FnMut(String, &Matrix)) {
        self.for_each_tensor(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix)) {
        self.for_each_tensor_mut(f);
    }
}

impl Parameterized for PoolingBaseline {
    fn visit(&self, f: &mut dyn FnMut(String, &Matrix)) {
        self.classifier.for_each_tensor("classifier", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix)) {
        self.classifier.for_each_tensor_mut("classifier", f);
    }
}

/// Bag-level prediction used for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub bag_prob: f64,
    pub instance_probs: Vec<f64>,
}

/// A bag classifier the trainer can fit.
pub trait MilModel: Parameterized + Clone {
    /// `seed` fixes any randomness of the forward pass.
    fn predict(&self, x: &Matrix, seed: u64) -> Result<Prediction>;
    /// Training loss of one bag, forward pass only.
    fn loss(&self, x: &Matrix, label: u8, seed: u64) -> Result<f64>;
    /// Loss and exact gradient with the same randomness as [`MilModel::loss`].
    fn loss_and_grad(&self, x: &Matrix, label: u8, seed: u64) -> Result<(f64, GradientSet)>;
}

impl MilModel for SnuffyModel {
    fn predict(&self, x: &Matrix, seed: u64) -> Result<Prediction> {
        let out = snuffy_forward(x, self, &RandomSource::Seeded(seed))?;
        Ok(Prediction {
            bag_prob: out.bag_prob,
            instance_probs: out.instance_probs,
        })
    }

    fn loss(&self, x: &Matrix, label: u8, seed: u64) -> Result<f64> {
        let out = snuffy_forward(x, self, &RandomSource::Seeded(seed))?;
        Ok(0.5 * (bag_loss(out.max_branch_prob, label) + bag_loss(out.attn_branch_prob, label)))
    }

    fn loss_and_grad(&self, x: &Matrix, label: u8, seed: u64) -> Result<(f64, GradientSet)> {
        let g = snuffy_backward(self, x, label, &RandomSource::Seeded(seed))?;
        Ok((g.loss, GradientSet::from_model(&g.grads)))
    }
}

impl MilModel for PoolingBaseline {
    fn predict(&self, x: &Matrix, _seed: u64) -> Result<Prediction> {
        let (z, logits) = self.bag_logit(x)?;
        Ok(Prediction {
            bag_prob: sigmoid(z),
            instance_probs: logits.iter().map(|&l| sigmoid(l)).collect(),
        })
    }

    fn loss(&self, x: &Matrix, label: u8, _seed: u64) -> Result<f64> {
        let (z, _) = self.bag_logit(x)?;
        Ok(bag_loss(sigmoid(z), label))
    }

    fn loss_and_grad(&self, x: &Matrix, label: u8, seed: u64) -> Result<(f64, GradientSet)> {
        let loss = self.loss(x, label, seed)?;
        let g = backward::baseline_backward(self, x, label)?;
        Ok((loss, GradientSet::from_model(&g)))
    }
}

/// One gradient tensor per parameter tensor, in the model's visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub entries: Vec<(String, Matrix)>,
}

impl GradientSet {
    /// Reads a gradient buffer laid out like the model.
    pub fn from_model<P: Parameterized>(grads: &P) -> Self {
        let mut entries = Vec::new();
        grads.visit(&mut |name, m| entries.push((name, m.clone())));
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Names and shapes must match the model's tensors one to one.
    pub fn check_congruent<P: Parameterized>(&self, model: &P) -> Result<()> {
        let mut i = 0;
        let mut err = None;
        model.visit(&mut |name, m| {
            if err.is_some() {
                return;
            }
            match self.entries.get(i) {
                Some((n, g)) if *n == name && g.shape() == m.shape() => {}
                Some((n, g)) => {
                    err = Some(contract!(
                        "gradient {n} {:?} does not match parameter {name} {:?}",
                        g.shape(),
                        m.shape()
                    ))
                }
                None => err = Some(contract!("no gradient for parameter {name}")),
            }
            i += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if i != self.entries.len() {
            return Err(contract!(
                "{} gradients for {i} parameters",
                self.entries.len()
            ));
        }
        Ok(())
    }

    /// Numeric error naming the first tensor with a non-finite entry.
    pub fn check_finite(&self) -> Result<()> {
        match self.entries.iter().find(|(_, m)| !m.is_finite()) {
            Some((name, _)) => Err(Error::Numeric(alloc::format!(
                "non-finite gradient for {name}"
            ))),
            None => Ok(()),
        }
    }
}
