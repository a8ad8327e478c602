use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::error::{input, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Length of the cosine schedule; 0 keeps the rate constant.
    pub total_steps: u64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps: 0,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            input(format!("invalid optimizer settings {self:?}"))
        }
    }

    /// `lr * (1 + cos(pi * step / total)) / 2`, for the zero-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.lr;
        }
        let frac = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// AdamW moments for every tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = ParamId::ALL.iter().map(|&id| vec![0.0; params.value(id).len()]).collect();
        Ok(Self {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        })
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        self.config.lr_at(self.step)
    }
}

/// One AdamW update from the gradients currently in `params`.
///
/// Decay is decoupled: matrices shrink by `1 - lr * weight_decay` before the
/// Adam step. Tensors in `frozen` are left untouched.
pub fn optimizer_step(params: &mut ParamStore, state: &mut OptimizerState, frozen: &[ParamId]) {
    let cfg = state.config.clone();
    let lr = cfg.lr_at(state.step);
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for id in ParamId::ALL {
        if frozen.contains(&id) {
            continue;
        }
        let i = id as usize;
        let decay = if id.decays() { 1.0 - lr * cfg.weight_decay } else { 1.0 };
        let (values, grads) = params.value_and_grad_mut(id);
        for (((x, &g), m), v) in values
            .iter_mut()
            .zip(grads)
            .zip(state.first[i].iter_mut())
            .zip(state.second[i].iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *x = *x * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::params::ModelDims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        let dims = ModelDims {
            frames: 2,
            tokens: 3,
            channels: 3,
            proto_dim: 2,
            classes: 2,
        };
        ParamStore::init(dims, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut p = store();
        let before = p.clone();
        let mut s = OptimizerState::new(&p, AdamWConfig { weight_decay: 0.0, ..Default::default() }).unwrap();
        optimizer_step(&mut p, &mut s, &[]);
        assert_eq!(p, before);
    }

    #[test]
    fn single_quadratic_step() {
        // f(x) = x^2 at x = 1: g = 2, m_hat = 2, v_hat = 4
        let mut p = store();
        p.value_mut(ParamId::Gate)[0] = 1.0;
        p.grad_mut(ParamId::Gate)[0] = 2.0;
        let cfg = AdamWConfig { lr: 0.1, ..Default::default() };
        let mut s = OptimizerState::new(&p, cfg).unwrap();
        optimizer_step(&mut p, &mut s, &[]);
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p.value(ParamId::Gate)[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn decay_only_step_scales_matrices() {
        let mut p = store();
        let before = p.clone();
        let cfg = AdamWConfig { lr: 0.05, weight_decay: 0.1, ..Default::default() };
        let mut s = OptimizerState::new(&p, cfg).unwrap();
        optimizer_step(&mut p, &mut s, &[]);
        let factor = 1.0 - 0.05 * 0.1;
        for id in ParamId::ALL {
            for (a, b) in p.value(id).iter().zip(before.value(id)) {
                let want = if id.decays() { b * factor } else { *b };
                assert_eq!(*a, want);
            }
        }
    }

    #[test]
    fn cosine_schedule() {
        let cfg = AdamWConfig { lr: 1.0, total_steps: 10, ..Default::default() };
        assert_eq!(cfg.lr_at(0), 1.0);
        assert!((cfg.lr_at(5) - 0.5).abs() < 1e-15);
        assert!(cfg.lr_at(10).abs() < 1e-15);
        assert!(cfg.lr_at(20).abs() < 1e-15);
        assert!(AdamWConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
    }
}
