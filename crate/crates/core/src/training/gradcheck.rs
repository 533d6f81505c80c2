//! Central finite differences of the forward-only loss, compared tensor by
//! tensor against the analytic gradient.

use alloc::string::String;
use alloc::vec::Vec;

use super::{GradientSet, MilModel};
use crate::error::Result;
use crate::linalg::Matrix;

pub const FD_STEP: f64 = 1e-5;

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let mut diff = a.clone();
    diff.scale(-1.0);
    diff.add_assign(b);
    diff.frobenius_norm() / a.frobenius_norm().max(b.frobenius_norm()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TensorCheck {
    pub name: String,
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradCheckReport {
    pub loss: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.tensors.iter().all(|t| t.rel_error <= tol)
    }

    pub fn failing(&self, tol: f64) -> impl Iterator<Item = &TensorCheck> {
        self.tensors
            .iter()
            .filter(move |t| t.rel_error.is_nan() || t.rel_error > tol)
    }
}

/// Numeric gradient of every tensor via `(L(θ+h) − L(θ−h)) / 2h`.
pub fn numeric_gradient<M: MilModel>(
    model: &M,
    x: &Matrix,
    label: u8,
    seed: u64,
    step: f64,
) -> Result<GradientSet> {
    let mut shapes = Vec::new();
    model.visit(&mut |name, m| shapes.push((name, m.rows(), m.cols())));
    let mut entries = Vec::with_capacity(shapes.len());
    let mut probe = model.clone();
    for (t, (name, rows, cols)) in shapes.into_iter().enumerate() {
        let mut fd = Matrix::zeros(rows, cols);
        for e in 0..rows * cols {
            let orig = nth_tensor(&mut probe, t, |m| m.as_slice()[e]);
            nth_tensor(&mut probe, t, |m| m.as_mut_slice()[e] = orig + step);
            let up = probe.loss(x, label, seed)?;
            nth_tensor(&mut probe, t, |m| m.as_mut_slice()[e] = orig - step);
            let down = probe.loss(x, label, seed)?;
            nth_tensor(&mut probe, t, |m| m.as_mut_slice()[e] = orig);
            fd.as_mut_slice()[e] = (up - down) / (2.0 * step);
        }
        entries.push((name, fd));
    }
    Ok(GradientSet { entries })
}

fn nth_tensor<M: MilModel, T>(model: &mut M, index: usize, f: impl FnOnce(&mut Matrix) -> T) -> T {
    let mut f = Some(f);
    let mut out = None;
    let mut i = 0;
    model.visit_mut(&mut |_, m| {
        if i == index {
            out = f.take().map(|f| f(m));
        }
        i += 1;
    });
    out.expect("tensor index in range")
}

/// Compares [`MilModel::loss_and_grad`] with [`numeric_gradient`].
pub fn gradient_check<M: MilModel>(
    model: &M,
    x: &Matrix,
    label: u8,
    seed: u64,
) -> Result<GradCheckReport> {
    let (loss, analytic) = model.loss_and_grad(x, label, seed)?;
    let numeric = numeric_gradient(model, x, label, seed, FD_STEP)?;
    let tensors = analytic
        .entries
        .iter()
        .zip(&numeric.entries)
        .map(|((name, a), (_, b))| TensorCheck {
            name: name.clone(),
            rel_error: relative_error(a, b),
            analytic_norm: a.frobenius_norm(),
            numeric_norm: b.frobenius_norm(),
        })
        .collect();
    Ok(GradCheckReport { loss, tensors })
}
