//! Adamax parameter updates.

use super::tape::Tensor;
use crate::error::{Error, Result};

/// Hyperparameters; the learning rate is the only one the experiments vary.
#[derive(Debug, Clone, Copy)]
pub struct AdamaxConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamaxConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: first-moment and infinity-norm accumulators per
/// parameter tensor. `u` entries are non-negative by construction.
#[derive(Debug, Clone)]
pub struct AdamaxState {
    pub cfg: AdamaxConfig,
    step: u64,
    m: Vec<Tensor>,
    u: Vec<Tensor>,
}

impl AdamaxState {
    pub fn new(params: &[Tensor], cfg: AdamaxConfig) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.dim())).collect();
        let u = params.iter().map(|p| Tensor::zeros(p.dim())).collect();
        Self { cfg, step: 0, m, u }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update:
    /// `m <- b1 m + (1-b1) g`, `u <- max(b2 u, |g|)`,
    /// `theta <- theta - lr/(1-b1^t) * m/(u+eps)`.
    ///
    /// Non-finite gradients reject the whole step without touching any
    /// parameter or accumulator.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Parameter(format!(
                "adamax: expected {} parameter tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.dim() != g.dim() {
                return Err(Error::Shape(format!(
                    "adamax: parameter {:?} vs gradient {:?}",
                    p.dim(),
                    g.dim()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(
                    "adamax: non-finite gradient, step rejected".into(),
                ));
            }
        }

        self.step += 1;
        let AdamaxConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bias = 1.0 - beta1.powi(self.step as i32);
        for ((p, g), (m, u)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.u.iter_mut()))
        {
            for ((pv, gv), (mv, uv)) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(u.iter_mut()))
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *uv = (beta2 * *uv).max(gv.abs());
                *pv -= (lr / bias) * *mv / (*uv + eps);
            }
        }
        Ok(())
    }
}
