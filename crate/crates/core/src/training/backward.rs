//! Hand-written reverse mode through the pooling head and the block stack.
//! The top-λ selection and the attend sets are constants of the pass.

use alloc::vec;
use alloc::vec::Vec;

use super::{bag_loss, bag_loss_logit_grad, Parameterized};
use crate::attention::{gelu_grad, layer_norm_backward, score_scale, BlockParams, BlockTrace};
use crate::error::{contract, Error, Result};
use crate::linalg::Matrix;
use crate::pooling::{snuffy_forward_traced, PoolKind, PoolingBaseline, RandomSource, SnuffyModel};

/// Loss of one bag and its gradient, laid out like the model.
#[derive(Debug, Clone)]
pub struct SnuffyGradients {
    pub loss: f64,
    pub grads: SnuffyModel,
}

pub fn snuffy_backward(
    model: &SnuffyModel,
    x: &Matrix,
    label: u8,
    source: &RandomSource,
) -> Result<SnuffyGradients> {
    if label > 1 {
        return Err(contract!("label must be 0 or 1, got {label}"));
    }
    let tr = snuffy_forward_traced(x, model, source)?;
    let out = &tr.output;
    let loss = 0.5 * (bag_loss(out.max_branch_prob, label) + bag_loss(out.attn_branch_prob, label));
    let mut g = model.zeros_like();

    let d_max = 0.5 * bag_loss_logit_grad(tr.max_logit, label);
    let d_attn = 0.5 * bag_loss_logit_grad(tr.attn_logit, label);

    // max branch: only the arg-max instance contributes
    for (gw, &xv) in g
        .max_branch
        .weight
        .as_mut_slice()
        .iter_mut()
        .zip(x.col(tr.argmax))
    {
        *gw += d_max * xv;
    }
    g.max_branch.bias.as_mut_slice()[0] += d_max;

    // readout over the mean of the top-set columns
    let top = &out.top_set;
    let inv = 1.0 / top.len() as f64;
    let d = x.rows();
    let mut mean = vec![0.0; d];
    for &k in top {
        for (m, v) in mean.iter_mut().zip(tr.contextual.col(k)) {
            *m += v * inv;
        }
    }
    for (gw, m) in g.bag_head.weight.as_mut_slice().iter_mut().zip(&mean) {
        *gw += d_attn * m;
    }
    g.bag_head.bias.as_mut_slice()[0] += d_attn;
    let mut dy = Matrix::zeros(d, x.cols());
    for &k in top {
        for (o, w) in dy
            .col_mut(k)
            .iter_mut()
            .zip(model.bag_head.weight.as_slice())
        {
            *o = d_attn * w * inv;
        }
    }

    let scale = model.hyper.scale_attention;
    for l in (0..model.blocks.len()).rev() {
        dy = block_backward(
            &dy,
            &model.blocks[l],
            &tr.blocks[l],
            scale,
            &mut g.blocks[l],
        );
    }

    let mut bad = None;
    g.visit(&mut |name, m| {
        if bad.is_none() && !m.is_finite() {
            bad = Some(name);
        }
    });
    if let Some(name) = bad {
        return Err(Error::Numeric(alloc::format!(
            "non-finite gradient for {name}"
        )));
    }
    Ok(SnuffyGradients { loss, grads: g })
}

/// Accumulates parameter gradients of one block into `g` and returns the
/// gradient with respect to the block input.
fn block_backward(
    dy: &Matrix,
    p: &BlockParams,
    tr: &BlockTrace,
    scale: bool,
    g: &mut BlockParams,
) -> Matrix {
    let n = dy.cols();

    // feed-forward half: out = W2·gelu(W1·LN2(h) + b1) + b2 + h
    for c in 0..n {
        for (b, v) in g.ff_b2.as_mut_slice().iter_mut().zip(dy.col(c)) {
            *b += v;
        }
    }
    dy.add_matmul_tr_into(&tr.act, &mut g.ff_w2);
    let mut d_pre = p.ff_w2.tr_matmul(dy);
    for (dp, &z) in d_pre.as_mut_slice().iter_mut().zip(tr.pre_act.as_slice()) {
        *dp *= gelu_grad(z);
    }
    for c in 0..n {
        for (b, v) in g.ff_b1.as_mut_slice().iter_mut().zip(d_pre.col(c)) {
            *b += v;
        }
    }
    d_pre.add_matmul_tr_into(&tr.normed2, &mut g.ff_w1);
    let d_normed2 = p.ff_w1.tr_matmul(&d_pre);
    let mut d_hidden = layer_norm_backward(
        &d_normed2,
        &tr.norm2,
        &p.ln2_scale,
        &mut g.ln2_scale,
        &mut g.ln2_shift,
    );
    d_hidden.add_assign(dy);

    // attention half: h = W_O·concat(heads(LN1(x))) + x
    d_hidden.add_matmul_tr_into(&tr.concat, &mut g.w_o);
    let d_concat = p.w_o.tr_matmul(&d_hidden);
    let mut d_normed1 = Matrix::zeros(tr.normed1.rows(), n);
    let mut row0 = 0;
    for (h, (w, ht)) in p.heads.iter().zip(&tr.heads).enumerate() {
        let d_v = w.d_v();
        let factor = score_scale(w.d_k(), scale);
        let mut dq = Matrix::zeros(w.d_k(), n);
        let mut dk = Matrix::zeros(w.d_k(), n);
        let mut dv = Matrix::zeros(d_v, n);
        let mut d_alpha: Vec<f64> = Vec::new();
        for c in 0..n {
            let (lo, hi) = (tr.sets.offsets[c], tr.sets.offsets[c + 1]);
            let idx = &tr.sets.indices[lo..hi];
            let alpha = &ht.alpha[lo..hi];
            let d_out = &d_concat.col(c)[row0..row0 + d_v];
            d_alpha.clear();
            for (&j, &a) in idx.iter().zip(alpha) {
                d_alpha.push(crate::linalg::dot(d_out, ht.v.col(j)));
                for (o, &dv_c) in dv.col_mut(j).iter_mut().zip(d_out) {
                    *o += a * dv_c;
                }
            }
            let weighted: f64 = alpha.iter().zip(&d_alpha).map(|(a, da)| a * da).sum();
            for ((&j, &a), &da) in idx.iter().zip(alpha).zip(&d_alpha) {
                let ds = factor * a * (da - weighted);
                if ds == 0.0 {
                    continue;
                }
                for (o, &kv) in dq.col_mut(c).iter_mut().zip(ht.k.col(j)) {
                    *o += ds * kv;
                }
                for (o, &qv) in dk.col_mut(j).iter_mut().zip(ht.q.col(c)) {
                    *o += ds * qv;
                }
            }
        }
        let gh = &mut g.heads[h];
        dq.add_matmul_tr_into(&tr.normed1, &mut gh.w_q);
        dk.add_matmul_tr_into(&tr.normed1, &mut gh.w_k);
        dv.add_matmul_tr_into(&tr.normed1, &mut gh.w_v);
        d_normed1.add_assign(&w.w_q.tr_matmul(&dq));
        d_normed1.add_assign(&w.w_k.tr_matmul(&dk));
        d_normed1.add_assign(&w.w_v.tr_matmul(&dv));
        row0 += d_v;
    }
    let mut dx = layer_norm_backward(
        &d_normed1,
        &tr.norm1,
        &p.ln1_scale,
        &mut g.ln1_scale,
        &mut g.ln1_shift,
    );
    dx.add_assign(&d_hidden);
    dx
}

pub(crate) fn baseline_backward(
    model: &PoolingBaseline,
    x: &Matrix,
    label: u8,
) -> Result<PoolingBaseline> {
    let (z, logits) = model.bag_logit(x)?;
    let dz = bag_loss_logit_grad(z, label);
    let mut g = model.zeros_like();
    let weights: Vec<(usize, f64)> = match model.kind {
        PoolKind::Mean => {
            let w = dz / logits.len() as f64;
            (0..logits.len()).map(|k| (k, w)).collect()
        }
        PoolKind::Max => {
            let (_, arg) = crate::pooling::max_pool_bag(&logits)?;
            vec![(arg, dz)]
        }
    };
    for (k, w) in weights {
        for (gw, &xv) in g.classifier.weight.as_mut_slice().iter_mut().zip(x.col(k)) {
            *gw += w * xv;
        }
        g.classifier.bias.as_mut_slice()[0] += w;
    }
    Ok(g)
}
