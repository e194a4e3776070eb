//! Adaptive Nesterov momentum (Adan) with three decay coefficients.
//!
//! Per parameter, with gradient `g_k` and `Δ_k = g_k − g_{k−1}` (zero at the
//! first step):
//!
//! ```text
//! m ← β1·m + (1−β1)·g
//! v ← β2·v + (1−β2)·Δ
//! n ← β3·n + (1−β3)·(g + β2·Δ)²
//! p ← p·(1 − lr·wd) − lr·(m/(1−β1^k) + β2·v/(1−β2^k)) / (sqrt(n/(1−β3^k)) + eps)
//! ```

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub name: String,
    pub betas: [f64; 3],
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; off when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            name: "adan".into(),
            betas: [0.98, 0.92, 0.99],
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name != "adan" {
            return Err(Error::Config(format!(
                "unsupported optimizer {:?} (available: adan)",
                self.name
            )));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config("optimizer betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("optimizer eps must be positive and weight decay non-negative".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Moment buffers of one parameter.
#[derive(Debug, Clone)]
pub struct AdanSlot {
    pub m: Tensor,
    pub v: Tensor,
    pub n: Tensor,
    pub prev_grad: Tensor,
}

#[derive(Debug, Clone)]
pub struct Adan {
    config: OptimizerConfig,
    step: u64,
    slots: BTreeMap<String, AdanSlot>,
}

impl Adan {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            slots: BTreeMap::new(),
        })
    }

    pub fn from_state(config: OptimizerConfig, step: u64, slots: BTreeMap<String, AdanSlot>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, step, slots })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn slots(&self) -> &BTreeMap<String, AdanSlot> {
        &self.slots
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Global L2 norm over all parameter gradients.
    pub fn grad_norm(params: &ParamStore, grads: &GradStore) -> Result<f64> {
        let mut sq = 0.0;
        for (_, var) in params.iter() {
            if let Some(g) = grads.get(var.as_tensor()) {
                sq += g
                    .sqr()?
                    .sum_all()?
                    .to_dtype(candle_core::DType::F64)?
                    .to_scalar::<f64>()?;
            }
        }
        Ok(sq.sqrt())
    }

    /// Applies one update; parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let k = self.step as i32;
        let [b1, b2, b3] = self.config.betas;
        let bc1 = 1.0 - b1.powi(k);
        let bc2 = 1.0 - b2.powi(k);
        let bc3 = 1.0 - b3.powi(k);
        let clip_scale = match self.config.grad_clip {
            Some(max) => {
                let norm = Self::grad_norm(params, grads)?;
                if norm > max { max / norm } else { 1.0 }
            }
            None => 1.0,
        };

        for (name, var) in params.iter() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let g = if clip_scale != 1.0 { (g * clip_scale)? } else { g };
            let slot = match self.slots.get(name) {
                Some(s) => s.clone(),
                None => {
                    let z = g.zeros_like()?;
                    AdanSlot {
                        m: z.clone(),
                        v: z.clone(),
                        n: z,
                        prev_grad: g.clone(),
                    }
                }
            };
            let diff = (&g - &slot.prev_grad)?;
            let m = ((&slot.m * b1)? + (&g * (1.0 - b1))?)?;
            let v = ((&slot.v * b2)? + (&diff * (1.0 - b2))?)?;
            let corr = (&g + (&diff * b2)?)?;
            let n = ((&slot.n * b3)? + (corr.sqr()? * (1.0 - b3))?)?;
            let denom = ((&n / bc3)?.sqrt()? + self.config.eps)?;
            let update = ((&m / bc1)? + (&v * (b2 / bc2))?)?.div(&denom)?;
            let p = var.as_tensor();
            let decayed = if self.config.weight_decay > 0.0 {
                (p * (1.0 - lr * self.config.weight_decay))?
            } else {
                p.clone()
            };
            var.set(&(decayed - (update * lr)?)?)?;
            self.slots.insert(
                name.clone(),
                AdanSlot {
                    m,
                    v,
                    n,
                    prev_grad: g,
                },
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};

    /// Scalar reference of the same recurrence.
    fn reference(grads: &[f64], lr: f64, betas: [f64; 3], eps: f64) -> f64 {
        let (mut m, mut v, mut n, mut p) = (0.0, 0.0, 0.0, 1.0);
        let mut prev = grads[0];
        for (i, &g) in grads.iter().enumerate() {
            let k = (i + 1) as i32;
            let d = g - prev;
            m = betas[0] * m + (1.0 - betas[0]) * g;
            v = betas[1] * v + (1.0 - betas[1]) * d;
            n = betas[2] * n + (1.0 - betas[2]) * (g + betas[1] * d).powi(2);
            let denom = (n / (1.0 - betas[2].powi(k))).sqrt() + eps;
            p -= lr * (m / (1.0 - betas[0].powi(k)) + betas[1] * v / (1.0 - betas[1].powi(k))) / denom;
            prev = g;
        }
        p
    }

    #[test]
    fn matches_scalar_recurrence() {
        let mut store = ParamStore::new(DType::F64, Device::Cpu);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        store.uniform("w".into(), &[1], 0.0, &mut rng).unwrap();
        store.set("w", &Tensor::new(&[1.0f64], &Device::Cpu).unwrap()).unwrap();
        let var: Var = store.get("w").unwrap().clone();
        let mut opt = Adan::new(OptimizerConfig::default()).unwrap();
        let coeffs = [2.0, -1.0, 0.5, 3.0];
        let mut seen = Vec::new();
        for c in coeffs {
            // loss = c·w²/2  →  grad = c·w
            let w = var.as_tensor();
            seen.push(c * w.to_vec1::<f64>().unwrap()[0]);
            let loss = ((w.sqr().unwrap() * (c / 2.0)).unwrap()).sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&store, &grads, 1e-2).unwrap();
        }
        // replay with the observed gradients
        let expected = reference(&seen, 1e-2, [0.98, 0.92, 0.99], 1e-8);
        let got = var.as_tensor().to_vec1::<f64>().unwrap()[0];
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn rejects_unknown_optimizer() {
        let mut c = OptimizerConfig::default();
        c.name = "sgd".into();
        assert!(Adan::new(c).is_err());
    }
}
