//! The dual-branch MIL pooling head.
//!
//! The max-pooling branch is a linear instance classifier; its bag score is
//! the largest instance logit. Its `λ_top` highest-scoring instances become
//! the class-related global attentions of a sparse transformer stack run over
//! the bag, and the attention branch reads the bag out as an affine map of the
//! mean contextual embedding of those instances. The bag probability averages
//! the two branch probabilities.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::attention::{stack_forward_traced, BlockParams, BlockShape, BlockTrace};
use crate::error::{contract, domain, Result};
use crate::linalg::{dot, sigmoid, Matrix};
use crate::patterns::{build_snuffy_patterns, PatternSet};
use crate::rng;

/// Affine map `x ↦ wᵀx + b` from `d_model` to a scalar logit.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Linear {
    /// `d × 1`
    pub weight: Matrix,
    /// `1 × 1`
    pub bias: Matrix,
}

pub type MaxBranchParams = Linear;

impl Linear {
    pub fn zeros(d: usize) -> Self {
        Self {
            weight: Matrix::zeros(d, 1),
            bias: Matrix::zeros(1, 1),
        }
    }

    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let a = 1.0 / libm::sqrt(d as f64);
        Self {
            weight: Matrix::from_fn(d, 1, |_, _| rng.random_range(-a..a)),
            bias: Matrix::zeros(1, 1),
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn bias_value(&self) -> f64 {
        self.bias.get(0, 0)
    }

    #[inline]
    pub fn apply(&self, x: &[f64]) -> f64 {
        dot(self.weight.as_slice(), x) + self.bias_value()
    }

    pub fn for_each_tensor(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn for_each_tensor_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SnuffyHyper {
    pub lambda_top: usize,
    pub lambda_r: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Multiply attention scores by `1/√d_k`.
    pub scale_attention: bool,
}

impl SnuffyHyper {
    pub fn new(
        d_model: usize,
        lambda_top: usize,
        lambda_r: usize,
        layers: usize,
        heads: usize,
    ) -> Self {
        Self {
            lambda_top,
            lambda_r,
            layers,
            heads,
            d_model,
            d_ff: 4 * d_model,
            scale_attention: true,
        }
    }

    pub fn block_shape(&self) -> BlockShape {
        let mut shape = BlockShape::standard(self.d_model, self.heads);
        shape.d_ff = self.d_ff;
        shape
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_top == 0 {
            return Err(domain!("lambda_top must be at least 1"));
        }
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(domain!("layers, heads, d_model and d_ff must be positive"));
        }
        Ok(())
    }

    /// `(λ_top, λ_r)` clamped to a bag of `n` instances.
    pub fn effective_lambdas(&self, n: usize) -> (usize, usize) {
        let top = self.lambda_top.min(n);
        (top, self.lambda_r.min(n - top))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SnuffyModel {
    pub max_branch: MaxBranchParams,
    pub blocks: Vec<BlockParams>,
    pub bag_head: Linear,
    pub hyper: SnuffyHyper,
}

impl SnuffyModel {
    pub fn zeros(hyper: SnuffyHyper) -> Self {
        Self {
            max_branch: Linear::zeros(hyper.d_model),
            blocks: (0..hyper.layers)
                .map(|_| BlockParams::zeros(hyper.block_shape()))
                .collect(),
            bag_head: Linear::zeros(hyper.d_model),
            hyper,
        }
    }

    pub fn init(hyper: SnuffyHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut r = rng::stream(seed, &[0x1417]);
        Ok(Self {
            max_branch: Linear::random(hyper.d_model, &mut r),
            blocks: (0..hyper.layers)
                .map(|_| BlockParams::random(hyper.block_shape(), &mut r))
                .collect(),
            bag_head: Linear::random(hyper.d_model, &mut r),
            hyper,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.blocks.len() != self.hyper.layers {
            return Err(contract!(
                "{} blocks for {} layers",
                self.blocks.len(),
                self.hyper.layers
            ));
        }
        let d = self.hyper.d_model;
        if self.max_branch.dim() != d
            || self.bag_head.dim() != d
            || self.blocks.iter().any(|b| b.d_model() != d)
        {
            return Err(contract!("parameter dimensions disagree with d_model {d}"));
        }
        self.blocks.iter().try_for_each(BlockParams::check)
    }

    pub fn for_each_tensor(&self, f: &mut dyn FnMut(String, &Matrix)) {
        self.max_branch.for_each_tensor("max_branch", f);
        for (l, b) in self.blocks.iter().enumerate() {
            b.for_each_tensor(&format!("blocks.{l}"), f);
        }
        self.bag_head.for_each_tensor("bag_head", f);
    }

    pub fn for_each_tensor_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix)) {
        self.max_branch.for_each_tensor_mut("max_branch", f);
        for (l, b) in self.blocks.iter_mut().enumerate() {
            b.for_each_tensor_mut(&format!("blocks.{l}"), f);
        }
        self.bag_head.for_each_tensor_mut("bag_head", f);
    }

    pub fn num_parameters(&self) -> usize {
        let mut count = 0;
        self.for_each_tensor(&mut |_, m| count += m.as_slice().len());
        count
    }
}

/// How the random global attentions of a forward pass are obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum RandomSource {
    /// Layer `l` draws from the stream `(seed, l)`.
    Seeded(u64),
    /// Explicit per-layer random sets (must avoid the selected top set).
    Fixed(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagOutput {
    pub bag_prob: f64,
    pub max_branch_prob: f64,
    pub attn_branch_prob: f64,
    pub instance_probs: Vec<f64>,
    pub top_set: Vec<usize>,
    pub pattern_set: PatternSet,
}

/// `logit_k = wᵀX_k + b` for every instance.
pub fn instance_scores(x: &Matrix, p: &MaxBranchParams) -> Result<Vec<f64>> {
    if x.rows() != p.dim() {
        return Err(contract!(
            "instance dimension {} != classifier dimension {}",
            x.rows(),
            p.dim()
        ));
    }
    Ok((0..x.cols()).map(|k| p.apply(x.col(k))).collect())
}

/// Largest logit and its first index.
pub fn max_pool_bag(logits: &[f64]) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &z) in logits.iter().enumerate() {
        if best.is_none_or(|(b, _)| z > b) {
            best = Some((z, i));
        }
    }
    best.ok_or_else(|| contract!("max pooling of an empty bag"))
}

/// Indices of the `λ` largest logits (ties to the lower index), returned in
/// ascending index order. `λ ≥ n` selects everything.
pub fn select_top_lambda(logits: &[f64], lambda_top: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(lambda_top.min(logits.len()));
    order.sort_unstable();
    order
}

/// `bag_head` applied to the mean of the contextual columns in `top_set`.
pub fn attention_bag_readout(
    contextual: &Matrix,
    top_set: &[usize],
    bag_head: &Linear,
) -> Result<f64> {
    if top_set.is_empty() {
        return Err(contract!("readout over an empty top set"));
    }
    let mut mean = alloc::vec![0.0; contextual.rows()];
    for &k in top_set {
        for (m, v) in mean.iter_mut().zip(contextual.col(k)) {
            *m += v;
        }
    }
    let inv = 1.0 / top_set.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(bag_head.apply(&mean))
}

/// Intermediates of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Vec<f64>,
    pub argmax: usize,
    pub max_logit: f64,
    pub attn_logit: f64,
    pub contextual: Matrix,
    pub blocks: Vec<BlockTrace>,
    pub output: BagOutput,
}

pub fn snuffy_forward(x: &Matrix, m: &SnuffyModel, source: &RandomSource) -> Result<BagOutput> {
    snuffy_forward_traced(x, m, source).map(|t| t.output)
}

pub fn snuffy_forward_traced(
    x: &Matrix,
    m: &SnuffyModel,
    source: &RandomSource,
) -> Result<ForwardTrace> {
    m.validate()?;
    let n = x.cols();
    if n == 0 {
        return Err(contract!("forward pass over an empty bag"));
    }
    let logits = instance_scores(x, &m.max_branch)?;
    let (max_logit, argmax) = max_pool_bag(&logits)?;
    let (lambda_top, lambda_r) = m.hyper.effective_lambdas(n);
    let top_set = select_top_lambda(&logits, lambda_top);
    let pattern_set = match source {
        RandomSource::Seeded(seed) => {
            build_snuffy_patterns(n, &top_set, lambda_r, m.hyper.layers, *seed)?
        }
        RandomSource::Fixed(sets) => PatternSet::from_parts(n, top_set.clone(), sets.clone())?,
    };
    let (contextual, blocks) =
        stack_forward_traced(x, &m.blocks, &pattern_set, m.hyper.scale_attention)?;
    let attn_logit = attention_bag_readout(&contextual, &top_set, &m.bag_head)?;
    let max_branch_prob = sigmoid(max_logit);
    let attn_branch_prob = sigmoid(attn_logit);
    let output = BagOutput {
        bag_prob: 0.5 * (max_branch_prob + attn_branch_prob),
        max_branch_prob,
        attn_branch_prob,
        instance_probs: logits.iter().map(|&z| sigmoid(z)).collect(),
        top_set,
        pattern_set,
    };
    Ok(ForwardTrace {
        logits,
        argmax,
        max_logit,
        attn_logit,
        contextual,
        blocks,
        output,
    })
}

/// Stream seed for evaluating bag `bag_id`: `(eval_seed, bag_id)`.
pub fn eval_bag_seed(eval_seed: u64, bag_id: &str) -> u64 {
    rng::derive_seed(eval_seed, &[rng::label_key(bag_id)])
}

/// Instance-level baseline: a linear instance classifier whose logits are
/// mean- or max-pooled before the sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PoolKind {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PoolingBaseline {
    pub kind: PoolKind,
    pub classifier: Linear,
}

impl PoolingBaseline {
    pub fn init(kind: PoolKind, d: usize, seed: u64) -> Self {
        Self {
            kind,
            classifier: Linear::random(d, &mut rng::stream(seed, &[0xBA5E])),
        }
    }

    pub fn bag_logit(&self, x: &Matrix) -> Result<(f64, Vec<f64>)> {
        let logits = instance_scores(x, &self.classifier)?;
        let pooled = match self.kind {
            PoolKind::Mean => {
                if logits.is_empty() {
                    return Err(contract!("mean pooling of an empty bag"));
                }
                logits.iter().sum::<f64>() / logits.len() as f64
            }
            PoolKind::Max => max_pool_bag(&logits)?.0,
        };
        Ok((pooled, logits))
    }
}

pub fn mean_pool_baseline(x: &Matrix, classifier: &Linear) -> Result<f64> {
    let b = PoolingBaseline {
        kind: PoolKind::Mean,
        classifier: classifier.clone(),
    };
    b.bag_logit(x).map(|(z, _)| sigmoid(z))
}

pub fn max_pool_baseline(x: &Matrix, classifier: &Linear) -> Result<f64> {
    let b = PoolingBaseline {
        kind: PoolKind::Max,
        classifier: classifier.clone(),
    };
    b.bag_logit(x).map(|(z, _)| sigmoid(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn max_pool_examples() {
        assert_eq!(max_pool_bag(&[0.1, 0.9, 0.3]).unwrap(), (0.9, 1));
        assert_eq!(max_pool_bag(&[0.2, 0.2, 0.2]).unwrap(), (0.2, 0));
        assert!(max_pool_bag(&[]).is_err());
    }

    #[test]
    fn top_lambda_examples() {
        assert_eq!(select_top_lambda(&[0.9, 0.1, 0.5], 2), vec![0, 2]);
        assert_eq!(select_top_lambda(&[0.9, 0.1, 0.5], 7), vec![0, 1, 2]);
        assert_eq!(select_top_lambda(&[1.0, 2.0, 2.0, 1.0], 2), vec![1, 2]);
        assert_eq!(select_top_lambda(&[1.0, 1.0, 1.0], 2), vec![0, 1]);
    }

    #[test]
    fn instance_scores_edge_cases() {
        let x = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, -1.0]]).unwrap();
        assert_eq!(
            instance_scores(&x, &Linear::zeros(2)).unwrap(),
            vec![0.0, 0.0]
        );
        let p = Linear {
            weight: Matrix::from_rows(&[&[0.5], &[2.0]]).unwrap(),
            bias: Matrix::from_rows(&[&[0.25]]).unwrap(),
        };
        let single = Matrix::from_rows(&[&[1.0], &[3.0]]).unwrap();
        assert_eq!(
            instance_scores(&single, &p).unwrap(),
            vec![0.5 + 6.0 + 0.25]
        );
        assert!(instance_scores(&x, &Linear::zeros(3)).is_err());
    }

    #[test]
    fn readout_single_and_identical_columns() {
        let head = Linear {
            weight: Matrix::from_rows(&[&[1.0], &[-2.0]]).unwrap(),
            bias: Matrix::from_rows(&[&[0.5]]).unwrap(),
        };
        let c = Matrix::from_rows(&[&[1.0, 4.0, 1.0], &[2.0, 0.0, 2.0]]).unwrap();
        assert_eq!(attention_bag_readout(&c, &[1], &head).unwrap(), 4.0 + 0.5);
        let a = attention_bag_readout(&c, &[0], &head).unwrap();
        assert_eq!(attention_bag_readout(&c, &[0, 2], &head).unwrap(), a);
        assert!(attention_bag_readout(&c, &[], &head).is_err());
    }

    #[test]
    fn single_instance_bag() {
        let hyper = SnuffyHyper::new(3, 4, 7, 2, 1);
        let m = SnuffyModel::init(hyper, 1).unwrap();
        let x = Matrix::from_rows(&[&[0.3], &[-0.1], &[0.8]]).unwrap();
        let out = snuffy_forward(&x, &m, &RandomSource::Seeded(0)).unwrap();
        assert_eq!(out.top_set, vec![0]);
        assert_eq!(out.pattern_set.attend_set(1, 0).unwrap(), vec![0]);
        assert!((out.bag_prob - 0.5 * (out.max_branch_prob + out.attn_branch_prob)).abs() < 1e-15);
        assert_eq!(out.max_branch_prob, out.instance_probs[0]);
    }

    #[test]
    fn baselines_agree_on_identical_instances() {
        let col = vec![0.4, -0.3];
        let x = Matrix::from_columns(&[col.clone(), col.clone(), col]).unwrap();
        let c = Linear {
            weight: Matrix::from_rows(&[&[1.0], &[2.0]]).unwrap(),
            bias: Matrix::zeros(1, 1),
        };
        assert!(
            (mean_pool_baseline(&x, &c).unwrap() - max_pool_baseline(&x, &c).unwrap()).abs()
                < 1e-15
        );
    }

    #[test]
    fn one_strong_positive_separates_the_baselines() {
        let x = Matrix::from_columns(&[vec![5.0], vec![-1.0], vec![-1.0], vec![-1.0]]).unwrap();
        let c = Linear {
            weight: Matrix::from_rows(&[&[1.0]]).unwrap(),
            bias: Matrix::zeros(1, 1),
        };
        let mean = mean_pool_baseline(&x, &c).unwrap();
        let max = max_pool_baseline(&x, &c).unwrap();
        assert!((mean - sigmoid(0.5)).abs() < 1e-15);
        assert!((max - sigmoid(5.0)).abs() < 1e-15);
        assert!(max > mean + 0.3);
    }
}
