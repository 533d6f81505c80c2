//! Sparse multi-head attention and pre-norm transformer blocks.
//!
//! A head computes, for every patch `k`,
//! `W_V X_{A_k} · softmax((W_K X_{A_k})ᵀ W_Q X_k)`, i.e. patch `k` only scores
//! the keys in its attend set `A_k`. Heads are concatenated and projected by
//! `W_O`. [`dense_masked_oracle`] is the reference path: the full `n × n`
//! score matrix with `−∞` written into masked entries before the softmax.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::patterns::{AttendSets, PatternSet};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeadWeights {
    /// `d_k × d_model`
    pub w_q: Matrix,
    /// `d_k × d_model`
    pub w_k: Matrix,
    /// `d_v × d_model`
    pub w_v: Matrix,
}

impl HeadWeights {
    pub fn zeros(d_model: usize, d_k: usize, d_v: usize) -> Self {
        Self {
            w_q: Matrix::zeros(d_k, d_model),
            w_k: Matrix::zeros(d_k, d_model),
            w_v: Matrix::zeros(d_v, d_model),
        }
    }

    pub fn random<R: Rng + ?Sized>(d_model: usize, d_k: usize, d_v: usize, rng: &mut R) -> Self {
        Self {
            w_q: glorot(d_k, d_model, rng),
            w_k: glorot(d_k, d_model, rng),
            w_v: glorot(d_v, d_model, rng),
        }
    }

    pub fn d_model(&self) -> usize {
        self.w_q.cols()
    }

    pub fn d_k(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_v(&self) -> usize {
        self.w_v.rows()
    }

    fn check(&self) -> Result<()> {
        let d = self.w_q.cols();
        if self.d_k() == 0 || self.d_v() == 0 {
            return Err(contract!("head dimensions must be at least 1"));
        }
        if self.w_k.shape() != self.w_q.shape() || self.w_v.cols() != d {
            return Err(contract!(
                "head weight shapes disagree: W_Q {:?}, W_K {:?}, W_V {:?}",
                self.w_q.shape(),
                self.w_k.shape(),
                self.w_v.shape()
            ));
        }
        Ok(())
    }
}

/// One pre-norm transformer block: `H = X + MHA(LN₁(X))`, `Y = H + FF(LN₂(H))`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockParams {
    pub heads: Vec<HeadWeights>,
    /// `d_model × (h·d_v)`
    pub w_o: Matrix,
    /// `d_ff × d_model`
    pub ff_w1: Matrix,
    /// `d_ff × 1`
    pub ff_b1: Matrix,
    /// `d_model × d_ff`
    pub ff_w2: Matrix,
    /// `d_model × 1`
    pub ff_b2: Matrix,
    pub ln1_scale: Matrix,
    pub ln1_shift: Matrix,
    pub ln2_scale: Matrix,
    pub ln2_shift: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockShape {
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_ff: usize,
}

impl BlockShape {
    /// `d_k = d_v = max(1, d_model / heads)`, `d_ff = 4·d_model`.
    pub fn standard(d_model: usize, heads: usize) -> Self {
        let d_head = (d_model / heads.max(1)).max(1);
        Self {
            d_model,
            heads,
            d_k: d_head,
            d_v: d_head,
            d_ff: 4 * d_model,
        }
    }
}

impl BlockParams {
    /// Zero attention and feed-forward weights, unit normalization scales:
    /// the block is the identity map.
    pub fn zeros(shape: BlockShape) -> Self {
        let BlockShape {
            d_model,
            heads,
            d_k,
            d_v,
            d_ff,
        } = shape;
        let mut ones = Matrix::zeros(d_model, 1);
        ones.fill(1.0);
        Self {
            heads: (0..heads)
                .map(|_| HeadWeights::zeros(d_model, d_k, d_v))
                .collect(),
            w_o: Matrix::zeros(d_model, heads * d_v),
            ff_w1: Matrix::zeros(d_ff, d_model),
            ff_b1: Matrix::zeros(d_ff, 1),
            ff_w2: Matrix::zeros(d_model, d_ff),
            ff_b2: Matrix::zeros(d_model, 1),
            ln1_scale: ones.clone(),
            ln1_shift: Matrix::zeros(d_model, 1),
            ln2_scale: ones,
            ln2_shift: Matrix::zeros(d_model, 1),
        }
    }

    /// Glorot-uniform weights, zero biases, unit normalization scales.
    pub fn random<R: Rng + ?Sized>(shape: BlockShape, rng: &mut R) -> Self {
        let BlockShape {
            d_model,
            heads,
            d_k,
            d_v,
            d_ff,
        } = shape;
        let mut p = Self::zeros(shape);
        p.heads = (0..heads)
            .map(|_| HeadWeights::random(d_model, d_k, d_v, rng))
            .collect();
        p.w_o = glorot(d_model, heads * d_v, rng);
        p.ff_w1 = glorot(d_ff, d_model, rng);
        p.ff_w2 = glorot(d_model, d_ff, rng);
        p
    }

    pub fn d_model(&self) -> usize {
        self.w_o.rows()
    }

    pub fn shape(&self) -> BlockShape {
        BlockShape {
            d_model: self.d_model(),
            heads: self.heads.len(),
            d_k: self.heads.first().map_or(0, HeadWeights::d_k),
            d_v: self.heads.first().map_or(0, HeadWeights::d_v),
            d_ff: self.ff_w1.rows(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let d = self.d_model();
        if self.heads.is_empty() {
            return Err(contract!("a block needs at least one head"));
        }
        let mut concat = 0;
        for (i, h) in self.heads.iter().enumerate() {
            h.check()?;
            if h.d_model() != d {
                return Err(contract!(
                    "head {i} expects d_model {}, block has {d}",
                    h.d_model()
                ));
            }
            concat += h.d_v();
        }
        let d_ff = self.ff_w1.rows();
        let ok = self.w_o.cols() == concat
            && self.ff_w1.cols() == d
            && self.ff_b1.shape() == (d_ff, 1)
            && self.ff_w2.shape() == (d, d_ff)
            && self.ff_b2.shape() == (d, 1)
            && [
                &self.ln1_scale,
                &self.ln1_shift,
                &self.ln2_scale,
                &self.ln2_shift,
            ]
            .iter()
            .all(|m| m.shape() == (d, 1));
        if !ok {
            return Err(contract!("block parameter shapes are inconsistent"));
        }
        Ok(())
    }

    /// Visits every tensor with a stable dotted name.
    pub fn for_each_tensor(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        for (i, h) in self.heads.iter().enumerate() {
            f(format!("{prefix}.heads.{i}.w_q"), &h.w_q);
            f(format!("{prefix}.heads.{i}.w_k"), &h.w_k);
            f(format!("{prefix}.heads.{i}.w_v"), &h.w_v);
        }
        f(format!("{prefix}.w_o"), &self.w_o);
        f(format!("{prefix}.ff_w1"), &self.ff_w1);
        f(format!("{prefix}.ff_b1"), &self.ff_b1);
        f(format!("{prefix}.ff_w2"), &self.ff_w2);
        f(format!("{prefix}.ff_b2"), &self.ff_b2);
        f(format!("{prefix}.ln1_scale"), &self.ln1_scale);
        f(format!("{prefix}.ln1_shift"), &self.ln1_shift);
        f(format!("{prefix}.ln2_scale"), &self.ln2_scale);
        f(format!("{prefix}.ln2_shift"), &self.ln2_shift);
    }

    pub fn for_each_tensor_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        for (i, h) in self.heads.iter_mut().enumerate() {
            f(format!("{prefix}.heads.{i}.w_q"), &mut h.w_q);
            f(format!("{prefix}.heads.{i}.w_k"), &mut h.w_k);
            f(format!("{prefix}.heads.{i}.w_v"), &mut h.w_v);
        }
        f(format!("{prefix}.w_o"), &mut self.w_o);
        f(format!("{prefix}.ff_w1"), &mut self.ff_w1);
        f(format!("{prefix}.ff_b1"), &mut self.ff_b1);
        f(format!("{prefix}.ff_w2"), &mut self.ff_w2);
        f(format!("{prefix}.ff_b2"), &mut self.ff_b2);
        f(format!("{prefix}.ln1_scale"), &mut self.ln1_scale);
        f(format!("{prefix}.ln1_shift"), &mut self.ln1_shift);
        f(format!("{prefix}.ln2_scale"), &mut self.ln2_scale);
        f(format!("{prefix}.ln2_shift"), &mut self.ln2_shift);
    }
}

fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let a = libm::sqrt(6.0 / (rows + cols) as f64);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

/// Attend sets of one layer flattened as CSR, plus softmax weights per head.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttendTrace {
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
}

impl AttendTrace {
    pub fn collect<A: AttendSets + ?Sized>(sets: &A, n: usize) -> Result<Self> {
        if sets.num_patches() != n {
            return Err(contract!(
                "attend sets cover {} patches, input has {n}",
                sets.num_patches()
            ));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut buf = Vec::new();
        offsets.push(0);
        for k in 0..n {
            sets.write_attend_set(k, &mut buf);
            if buf.is_empty() {
                return Err(contract!("attend set of patch {k} is empty"));
            }
            if !buf.contains(&k) {
                return Err(contract!("attend set of patch {k} does not contain {k}"));
            }
            if let Some(&j) = buf.iter().find(|&&j| j >= n) {
                return Err(contract!(
                    "attend set of patch {k} has out-of-range index {j}"
                ));
            }
            indices.extend_from_slice(&buf);
            offsets.push(indices.len());
        }
        Ok(Self { offsets, indices })
    }

    #[inline]
    pub fn set(&self, k: usize) -> &[usize] {
        &self.indices[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of query–key score evaluations per head.
    pub fn score_evaluations(&self) -> usize {
        self.indices.len()
    }
}

pub(crate) fn score_scale(d_k: usize, scale: bool) -> f64 {
    if scale {
        1.0 / libm::sqrt(d_k as f64)
    } else {
        1.0
    }
}

/// Softmax-weighted sum over each attend set. Writes the weights (same
/// layout as `trace.indices`) into `alpha` and the output columns into `out`.
fn attend(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    trace: &AttendTrace,
    factor: f64,
    alpha: &mut Vec<f64>,
    out: &mut Matrix,
) {
    alpha.clear();
    alpha.resize(trace.indices.len(), 0.0);
    for col in 0..trace.n() {
        let (lo, hi) = (trace.offsets[col], trace.offsets[col + 1]);
        let query = q.col(col);
        let weights = &mut alpha[lo..hi];
        let mut max = f64::NEG_INFINITY;
        for (w, &j) in weights.iter_mut().zip(&trace.indices[lo..hi]) {
            *w = factor * dot(k.col(j), query);
            max = max.max(*w);
        }
        let mut sum = 0.0;
        for w in weights.iter_mut() {
            *w = libm::exp(*w - max);
            sum += *w;
        }
        let dst = out.col_mut(col);
        dst.iter_mut().for_each(|x| *x = 0.0);
        for (w, &j) in weights.iter_mut().zip(&trace.indices[lo..hi]) {
            *w /= sum;
            for (o, &vj) in dst.iter_mut().zip(v.col(j)) {
                *o += *w * vj;
            }
        }
    }
}

fn check_finite(x: &Matrix, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains non-finite values")))
    }
}

/// Sparse attention head: column `k` of the result is
/// `W_V X_{A_k} · softmax(s)` with `s_j = c·(W_K X_j)·(W_Q X_k)` over `j ∈ A_k`,
/// `c = 1/√d_k` when `scale` is set and `1` otherwise.
pub fn sparse_head<A: AttendSets + ?Sized>(
    x: &Matrix,
    w: &HeadWeights,
    sets: &A,
    scale: bool,
) -> Result<Matrix> {
    sparse_head_counted(x, w, sets, scale).map(|(m, _)| m)
}

/// [`sparse_head`] that also reports the number of score evaluations.
pub fn sparse_head_counted<A: AttendSets + ?Sized>(
    x: &Matrix,
    w: &HeadWeights,
    sets: &A,
    scale: bool,
) -> Result<(Matrix, usize)> {
    w.check()?;
    check_input(x, w.d_model())?;
    let trace = AttendTrace::collect(sets, x.cols())?;
    let (q, k, v) = (w.w_q.matmul(x), w.w_k.matmul(x), w.w_v.matmul(x));
    let mut out = Matrix::zeros(w.d_v(), x.cols());
    let mut alpha = Vec::new();
    attend(
        &q,
        &k,
        &v,
        &trace,
        score_scale(w.d_k(), scale),
        &mut alpha,
        &mut out,
    );
    Ok((out, trace.score_evaluations()))
}

fn check_input(x: &Matrix, d_model: usize) -> Result<()> {
    if x.cols() == 0 {
        return Err(contract!("embedding matrix has no patches"));
    }
    if x.rows() != d_model {
        return Err(contract!(
            "embedding dimension {} != d_model {d_model}",
            x.rows()
        ));
    }
    check_finite(x, "embedding matrix")
}

/// Reference head: full score matrix, `−∞` where `mask[k][j]` is false
/// (`k` does not attend to `j`), column softmax, then `W_V X · P`.
pub fn dense_masked_oracle(
    x: &Matrix,
    w: &HeadWeights,
    mask: &[Vec<bool>],
    scale: bool,
) -> Result<Matrix> {
    w.check()?;
    check_input(x, w.d_model())?;
    let n = x.cols();
    if mask.len() != n || mask.iter().any(|r| r.len() != n) {
        return Err(contract!("mask must be {n} x {n}"));
    }
    for (k, row) in mask.iter().enumerate() {
        if !row.iter().any(|&b| b) {
            return Err(contract!("mask row {k} is all false"));
        }
        if !row[k] {
            return Err(contract!("mask row {k} lacks the diagonal"));
        }
    }
    let (q, k, v) = (w.w_q.matmul(x), w.w_k.matmul(x), w.w_v.matmul(x));
    let factor = score_scale(w.d_k(), scale);
    // scores[j, c] = k_j · q_c
    let mut probs = k.tr_matmul(&q);
    probs.scale(factor);
    for (c, row) in mask.iter().enumerate() {
        let col = probs.col_mut(c);
        for (s, &keep) in col.iter_mut().zip(row) {
            if !keep {
                *s = f64::NEG_INFINITY;
            }
        }
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in col.iter_mut() {
            *s = libm::exp(*s - max);
            sum += *s;
        }
        col.iter_mut().for_each(|s| *s /= sum);
    }
    Ok(v.matmul(&probs))
}

/// Boolean mask equivalent to an attend-set layer.
pub fn mask_from_sets<A: AttendSets + ?Sized>(sets: &A) -> Vec<Vec<bool>> {
    let n = sets.num_patches();
    let mut buf = Vec::new();
    (0..n)
        .map(|k| {
            let mut row = vec![false; n];
            sets.write_attend_set(k, &mut buf);
            for &j in &buf {
                row[j] = true;
            }
            row
        })
        .collect()
}

/// Per-column layer normalization intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct NormTrace {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

fn layer_norm(x: &Matrix, scale: &Matrix, shift: &Matrix) -> (Matrix, NormTrace) {
    let d = x.rows() as f64;
    let mut normalized = Matrix::zeros(x.rows(), x.cols());
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut inv_std = Vec::with_capacity(x.cols());
    for c in 0..x.cols() {
        let col = x.col(c);
        let mean = col.iter().sum::<f64>() / d;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / libm::sqrt(var + LN_EPS);
        inv_std.push(inv);
        for (r, &v) in col.iter().enumerate() {
            let xh = (v - mean) * inv;
            normalized.set(r, c, xh);
            out.set(r, c, scale.get(r, 0) * xh + shift.get(r, 0));
        }
    }
    (
        out,
        NormTrace {
            normalized,
            inv_std,
        },
    )
}

/// Backward of [`layer_norm`]: accumulates scale/shift gradients and returns
/// the gradient with respect to the normalized input.
pub(crate) fn layer_norm_backward(
    d_out: &Matrix,
    trace: &NormTrace,
    scale: &Matrix,
    d_scale: &mut Matrix,
    d_shift: &mut Matrix,
) -> Matrix {
    let rows = d_out.rows();
    let d = rows as f64;
    let mut dx = Matrix::zeros(rows, d_out.cols());
    let mut dxh = vec![0.0; rows];
    for c in 0..d_out.cols() {
        let g = d_out.col(c);
        let xh = trace.normalized.col(c);
        for r in 0..rows {
            d_scale.as_mut_slice()[r] += g[r] * xh[r];
            d_shift.as_mut_slice()[r] += g[r];
            dxh[r] = g[r] * scale.get(r, 0);
        }
        let mean_dxh = dxh.iter().sum::<f64>() / d;
        let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
        let inv = trace.inv_std[c];
        for (r, o) in dx.col_mut(c).iter_mut().enumerate() {
            *o = inv * (dxh[r] - mean_dxh - xh[r] * mean_dxh_xh);
        }
    }
    dx
}

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
        + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

/// Intermediates of one head inside a block.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrace {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Softmax weights laid out like [`AttendTrace::indices`].
    pub alpha: Vec<f64>,
}

/// Everything the backward pass needs from a block forward.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    pub sets: AttendTrace,
    pub norm1: NormTrace,
    pub normed1: Matrix,
    pub heads: Vec<HeadTrace>,
    pub concat: Matrix,
    pub norm2: NormTrace,
    pub normed2: Matrix,
    pub pre_act: Matrix,
    pub act: Matrix,
}

/// Head kernel used by a block: sparse over attend sets, or dense masked.
enum Kernel<'a> {
    Sparse(AttendTrace),
    Dense(&'a [Vec<bool>]),
}

fn block_forward(
    x: &Matrix,
    p: &BlockParams,
    kernel: Kernel<'_>,
    scale: bool,
) -> Result<(Matrix, BlockTrace)> {
    p.check()?;
    check_input(x, p.d_model())?;
    let n = x.cols();
    let (normed1, norm1) = layer_norm(x, &p.ln1_scale, &p.ln1_shift);
    let concat_rows: usize = p.heads.iter().map(HeadWeights::d_v).sum();
    let mut concat = Matrix::zeros(concat_rows, n);
    let mut heads = Vec::with_capacity(p.heads.len());
    let mut row0 = 0;
    let sets = match &kernel {
        Kernel::Sparse(t) => t.clone(),
        Kernel::Dense(_) => AttendTrace::default(),
    };
    for h in &p.heads {
        let out = match &kernel {
            Kernel::Sparse(trace) => {
                let (q, k, v) = (
                    h.w_q.matmul(&normed1),
                    h.w_k.matmul(&normed1),
                    h.w_v.matmul(&normed1),
                );
                let mut out = Matrix::zeros(h.d_v(), n);
                let mut alpha = Vec::new();
                attend(
                    &q,
                    &k,
                    &v,
                    trace,
                    score_scale(h.d_k(), scale),
                    &mut alpha,
                    &mut out,
                );
                heads.push(HeadTrace { q, k, v, alpha });
                out
            }
            Kernel::Dense(mask) => dense_masked_oracle(&normed1, h, mask, scale)?,
        };
        for c in 0..n {
            concat.col_mut(c)[row0..row0 + h.d_v()].copy_from_slice(out.col(c));
        }
        row0 += h.d_v();
    }
    let mut hidden = p.w_o.matmul(&concat);
    hidden.add_assign(x);
    let (normed2, norm2) = layer_norm(&hidden, &p.ln2_scale, &p.ln2_shift);
    let mut pre_act = p.ff_w1.matmul(&normed2);
    for c in 0..n {
        for (a, b) in pre_act.col_mut(c).iter_mut().zip(p.ff_b1.as_slice()) {
            *a += b;
        }
    }
    let mut act = pre_act.clone();
    act.as_mut_slice().iter_mut().for_each(|a| *a = gelu(*a));
    let mut out = p.ff_w2.matmul(&act);
    for c in 0..n {
        for (o, (b, h)) in out
            .col_mut(c)
            .iter_mut()
            .zip(p.ff_b2.as_slice().iter().zip(hidden.col(c)))
        {
            *o += b + h;
        }
    }
    check_finite(&out, "block output")?;
    let trace = BlockTrace {
        sets,
        norm1,
        normed1,
        heads,
        concat,
        norm2,
        normed2,
        pre_act,
        act,
    };
    Ok((out, trace))
}

/// Pre-norm transformer block with sparse multi-head attention.
pub fn transformer_block<A: AttendSets + ?Sized>(
    x: &Matrix,
    p: &BlockParams,
    sets: &A,
    scale: bool,
) -> Result<Matrix> {
    transformer_block_traced(x, p, sets, scale).map(|(y, _)| y)
}

pub fn transformer_block_traced<A: AttendSets + ?Sized>(
    x: &Matrix,
    p: &BlockParams,
    sets: &A,
    scale: bool,
) -> Result<(Matrix, BlockTrace)> {
    let trace = AttendTrace::collect(sets, x.cols())?;
    block_forward(x, p, Kernel::Sparse(trace), scale)
}

/// Same block with every head computed by [`dense_masked_oracle`].
pub fn transformer_block_masked(
    x: &Matrix,
    p: &BlockParams,
    mask: &[Vec<bool>],
    scale: bool,
) -> Result<Matrix> {
    block_forward(x, p, Kernel::Dense(mask), scale).map(|(y, _)| y)
}

/// Runs block `l` with the attend sets of layer `l` of `ps`.
pub fn stack_forward(
    x: &Matrix,
    blocks: &[BlockParams],
    ps: &PatternSet,
    scale: bool,
) -> Result<Matrix> {
    stack_forward_traced(x, blocks, ps, scale).map(|(y, _)| y)
}

pub fn stack_forward_traced(
    x: &Matrix,
    blocks: &[BlockParams],
    ps: &PatternSet,
    scale: bool,
) -> Result<(Matrix, Vec<BlockTrace>)> {
    if blocks.len() != ps.num_layers() {
        return Err(contract!(
            "{} blocks for a {}-layer pattern set",
            blocks.len(),
            ps.num_layers()
        ));
    }
    if ps.n() != x.cols() {
        return Err(contract!(
            "pattern set has n = {}, input has {} patches",
            ps.n(),
            x.cols()
        ));
    }
    let mut h = x.clone();
    let mut traces = Vec::with_capacity(blocks.len());
    for (l, block) in blocks.iter().enumerate() {
        let (next, trace) = transformer_block_traced(&h, block, &ps.layer(l), scale)?;
        traces.push(trace);
        h = next;
    }
    Ok((h, traces))
}

/// Dense-masked reference for [`stack_forward`].
pub fn stack_forward_masked(
    x: &Matrix,
    blocks: &[BlockParams],
    masks: &[Vec<Vec<bool>>],
    scale: bool,
) -> Result<Matrix> {
    if blocks.len() != masks.len() {
        return Err(contract!(
            "{} blocks for {} masks",
            blocks.len(),
            masks.len()
        ));
    }
    let mut h = x.clone();
    for (block, mask) in blocks.iter().zip(masks) {
        h = transformer_block_masked(&h, block, mask, scale)?;
    }
    Ok(h)
}
