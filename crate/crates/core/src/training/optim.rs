use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay; 0 gives plain Adam.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    /// AdamW with betas (0.9, 0.999) and decay 0.05.
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.05 }
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self { lr, weight_decay: 0.0, ..Default::default() }
    }
}

/// Moment estimates for every parameter of one store.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: OptimizerConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>, config: OptimizerConfig) -> Self {
        let zeros = |id: ParamId| Tensor::zeros(store.get(id).shape().to_vec());
        Self { config, step: 0, m: store.ids().map(zeros).collect(), v: store.ids().map(zeros).collect() }
    }

    /// One AdamW step at learning rate `lr`. Parameters absent from `grads`
    /// are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) -> Result<()> {
        for (id, g) in grads {
            if id.index() >= self.m.len() || store.get(*id).shape() != g.shape() {
                return Err(Error::dim(
                    "optimizer step",
                    format!("gradient {:?} for parameter `{}`", g.shape(), store.name(*id)),
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (id, g) in grads {
            let i = id.index();
            let theta = store.get_mut(*id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for k in 0..theta.len() {
                let gk = g.data()[k].as_f64();
                let mut p = theta[k].as_f64();
                p -= lr * c.weight_decay * p;
                let mk = c.beta1 * m[k].as_f64() + (1.0 - c.beta1) * gk;
                let vk = c.beta2 * v[k].as_f64() + (1.0 - c.beta2) * gk * gk;
                p -= lr * (mk / bc1) / ((vk / bc2).sqrt() + c.eps);
                m[k] = T::cst(mk);
                v[k] = T::cst(vk);
                theta[k] = T::cst(p);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [(ParamId, Tensor<T>)], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|(_, g)| g.data()).map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = T::cst(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub start_lr: f64,
    pub min_lr: f64,
    pub warmup_epochs: f64,
    pub total_epochs: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { base_lr: 1e-3, start_lr: 0.0, min_lr: 1e-5, warmup_epochs: 20.0, total_epochs: 300.0 }
    }
}

impl ScheduleConfig {
    /// No warmup, a half cosine from `lr` down to 0.
    pub fn cosine_decay(lr: f64) -> Self {
        Self { base_lr: lr, start_lr: lr, min_lr: 0.0, warmup_epochs: 0.0, total_epochs: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=self.total_epochs).contains(&self.warmup_epochs) || self.total_epochs <= 0.0 {
            return Err(Error::Config(format!(
                "warmup of {} epochs in a {}-epoch schedule",
                self.warmup_epochs, self.total_epochs
            )));
        }
        Ok(())
    }
}

/// Learning rate at `fraction` of training: a linear ramp from `start_lr`
/// over the warmup, then a half cosine from `base_lr` down to `min_lr`.
pub fn lr_at(fraction: f64, cfg: &ScheduleConfig) -> f64 {
    let e = fraction.clamp(0.0, 1.0) * cfg.total_epochs;
    if e < cfg.warmup_epochs {
        return cfg.start_lr + (cfg.base_lr - cfg.start_lr) * e / cfg.warmup_epochs;
    }
    let span = cfg.total_epochs - cfg.warmup_epochs;
    let progress = if span > 0.0 { (e - cfg.warmup_epochs) / span } else { 1.0 };
    if progress <= 0.0 {
        cfg.base_lr
    } else if progress >= 1.0 {
        cfg.min_lr
    } else {
        cfg.min_lr + (cfg.base_lr - cfg.min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::full(vec![1, 1], v)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut s, id) = one_param(0.7);
        let mut opt = OptimizerState::new(&s, OptimizerConfig::adam(0.1));
        opt.step(&mut s, &[(id, Tensor::zeros(vec![1, 1]))], 0.1).unwrap();
        assert_eq!(s.get(id).item().unwrap(), 0.7);
    }

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        let (mut s, id) = one_param(0.0);
        let mut cfg = OptimizerConfig::adam(0.1);
        cfg.eps = 1e-12;
        let mut opt = OptimizerState::new(&s, cfg);
        opt.step(&mut s, &[(id, Tensor::ones(vec![1, 1]))], 0.1).unwrap();
        assert!((s.get(id).item().unwrap() + 0.1).abs() < 1e-10);
    }

    #[test]
    fn zero_learning_rate_is_the_identity() {
        let (mut s, id) = one_param(3.0);
        let mut opt = OptimizerState::new(&s, OptimizerConfig::default());
        opt.step(&mut s, &[(id, Tensor::full(vec![1, 1], 2.0))], 0.0).unwrap();
        assert_eq!(s.get(id).item().unwrap(), 3.0);
    }

    #[test]
    fn mismatched_gradient_is_rejected() {
        let (mut s, id) = one_param(3.0);
        let mut opt = OptimizerState::new(&s, OptimizerConfig::default());
        assert!(opt.step(&mut s, &[(id, Tensor::zeros(vec![2, 1]))], 0.1).is_err());
    }

    #[test]
    fn clipping_scales_to_the_bound() {
        let (_, id) = one_param(0.0);
        let mut g = vec![(id, Tensor::<f64>::from_f64(vec![1, 2], &[3.0, 4.0]).unwrap())];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].1.data()[0] - 0.6).abs() < 1e-15);
        assert!((clip_grad_norm(&mut g, 5.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn schedule_endpoints() {
        let cfg =
            ScheduleConfig { base_lr: 1e-3, start_lr: 1e-6, min_lr: 1e-5, warmup_epochs: 5.0, total_epochs: 50.0 };
        assert_eq!(lr_at(0.0, &cfg), 1e-6);
        assert_eq!(lr_at(0.1, &cfg), 1e-3);
        assert_eq!(lr_at(1.0, &cfg), 1e-5);
        let mid = lr_at(0.55, &cfg);
        assert!((mid - (1e-5 + (1e-3 - 1e-5) * 0.5)).abs() < 1e-15);
        assert!(cfg.validate().is_ok());
        assert!(ScheduleConfig { warmup_epochs: 60.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn cosine_decay_halves_at_the_midpoint() {
        let cfg = ScheduleConfig::cosine_decay(4e-3);
        assert_eq!(lr_at(0.0, &cfg), 4e-3);
        assert!((lr_at(0.5, &cfg) - 2e-3).abs() < 1e-18);
        assert_eq!(lr_at(1.0, &cfg), 0.0);
    }
}
