//! AdamW with decoupled weight decay and the inverse-sqrt warm-up schedule.

use serde::{Deserialize, Serialize};

use super::params::{ParamLayout, Params};
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-9,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer moments for one parameter buffer.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    m: Vec<F>,
    v: Vec<F>,
    /// Completed updates.
    pub step: u64,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(config: AdamWConfig, layout: &ParamLayout) -> Self {
        Self {
            config,
            m: vec![F::zero(); layout.total],
            v: vec![F::zero(); layout.total],
            step: 0,
        }
    }

    /// One update. Weight decay applies to matrices only.
    pub fn update(&mut self, params: &mut Params<F>, grads: &Params<F>, layout: &ParamLayout, lr: f64) -> Result<()> {
        grads.check_finite(layout, "gradient of")?;
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let (one_b1, one_b2) = (F::of(1.0 - c.beta1), F::of(1.0 - c.beta2));
        let step_size = F::of(lr / bc1);
        let inv_bc2 = F::of(1.0 / bc2);
        let eps = F::of(c.eps);
        let decay = F::of(1.0 - lr * c.weight_decay);
        for e in &layout.entries {
            let r = e.range();
            let p = &mut params.data[r.clone()];
            let g = &grads.data[r.clone()];
            let m = &mut self.m[r.clone()];
            let v = &mut self.v[r];
            for i in 0..p.len() {
                if e.is_matrix {
                    p[i] = p[i] * decay;
                }
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                p[i] = p[i] - step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
        if params.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric("parameters after update"));
        }
        Ok(())
    }
}

/// Linear warm-up from `init` to `peak`, then `peak * sqrt(warmup / step)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseSqrt {
    pub peak: f64,
    pub warmup: u64,
    pub init: f64,
}

impl InverseSqrt {
    pub fn new(peak: f64, warmup: u64) -> Self {
        Self { peak, warmup, init: 1e-7 }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if self.warmup == 0 {
            return self.peak;
        }
        if step <= self.warmup {
            self.init + (self.peak - self.init) * step as f64 / self.warmup as f64
        } else {
            self.peak * (self.warmup as f64 / step as f64).sqrt()
        }
    }
}
