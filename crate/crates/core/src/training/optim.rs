use alloc::vec::Vec;

use super::{GradientSet, Parameterized};
use crate::error::{domain, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamWConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            betas: (0.5, 0.9),
            weight_decay: 0.05,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(domain!("betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        if self.lr.is_nan()
            || self.lr < 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
            || self.eps.is_nan()
            || self.eps <= 0.0
        {
            return Err(domain!(
                "lr and weight decay must be non-negative, eps positive"
            ));
        }
        Ok(())
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamWState {
    pub fn new<P: Parameterized>(params: &P) -> Self {
        let mut m = Vec::new();
        params.visit(&mut |_, t| m.push(Matrix::zeros(t.rows(), t.cols())));
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One AdamW update: `θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + ε)`.
pub fn adamw_step<P: Parameterized>(
    params: &mut P,
    grads: &GradientSet,
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<()> {
    grads.check_congruent(params)?;
    if state.m.len() != grads.len() {
        *state = AdamWState::new(params);
    }
    state.step += 1;
    let (b1, b2) = cfg.betas;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(b1, f64::from(t));
    let c2 = 1.0 - libm::pow(b2, f64::from(t));
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    let mut i = 0;
    params.visit_mut(&mut |_, theta| {
        let g = grads.entries[i].1.as_slice();
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        for (((p, &gj), mj), vj) in theta.as_mut_slice().iter_mut().zip(g).zip(m).zip(v) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
            let m_hat = *mj / c1;
            let v_hat = *vj / c2;
            *p = *p * decay - cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
        i += 1;
    });
    Ok(())
}
