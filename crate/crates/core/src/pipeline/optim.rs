use crate::error::{Error, Result};
use crate::numerics::Tensor;
use serde::{Deserialize, Serialize};

/// Adam moments with decoupled weight decay and a step schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// The step size is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    #[serde(default)]
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            decay_every: 30,
            decay_factor: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 0.1,
        }
    }
}

impl OptimConfig {
    pub fn toy() -> Self {
        Self {
            lr: 1e-3,
            decay_every: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("optim.lr", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("optim.weight_decay", "must be non-negative"));
        }
        if self.decay_every == 0 {
            return Err(Error::config("optim.decay_every", "must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config("optim.decay_factor", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("optim.beta1", "moment decays must lie in [0, 1)"));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::config("optim.clip_norm", "must be non-negative"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("optim.eps", "must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

pub struct AdamW {
    cfg: OptimConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(cfg: OptimConfig, sizes: &[usize]) -> Self {
        Self {
            cfg,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// Advances the step counter; call once before the updates of a step.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Updates tensor `k` in place.
    pub fn update(&mut self, k: usize, p: &mut Tensor, g: &[f64], lr: f64) -> Result<()> {
        let c = &self.cfg;
        let (m, v) = match (self.m.get_mut(k), self.v.get_mut(k)) {
            (Some(m), Some(v)) => (m, v),
            _ => return Err(Error::shape("adamw", &[self.m.len()], &[k])),
        };
        if g.len() != m.len() || p.numel() != m.len() {
            return Err(Error::shape("adamw", &[m.len()], &[g.len()]));
        }
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let step = (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
            *x -= lr * (step + c.weight_decay * *x);
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("adamw", &[self.m.len()], &[params.len(), grads.len()]));
        }
        self.begin_step();
        for (k, p) in params.iter_mut().enumerate() {
            self.update(k, p, grads[k], lr)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let c = OptimConfig::default();
        assert_eq!(c.lr_at(0), 1e-4);
        assert_eq!(c.lr_at(29), 1e-4);
        assert!((c.lr_at(30) - 1e-5).abs() < 1e-20);
        assert!((c.lr_at(65) - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::vector(vec![1.0, -2.0]).unwrap();
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut opt = AdamW::new(cfg, &[2]);
        opt.step(&mut [&mut p], &[&[3.0, -0.5]], 0.1).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-7);
        assert!((p.data()[1] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = Tensor::vector(vec![2.0]).unwrap();
        let cfg = OptimConfig {
            weight_decay: 0.5,
            ..OptimConfig::default()
        };
        let mut opt = AdamW::new(cfg, &[1]);
        opt.step(&mut [&mut p], &[&[0.0]], 0.1).unwrap();
        assert!((p.data()[0] - 1.9).abs() < 1e-12);
    }
}
