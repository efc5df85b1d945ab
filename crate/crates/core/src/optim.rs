//! AdamW with decoupled weight decay and a linear-warmup cosine schedule.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    /// β1 = 0.9, β2 = 0.95, weight decay 0.1, ε = 1e-8.
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One AdamW update of `param` at (1-based) step `t`.
///
/// The decay `param *= 1 - lr·wd` is applied first and independently of the
/// moment update.
pub fn adamw_update(param: &mut Tensor, moments: &mut Moments, cfg: &AdamWConfig, t: u64, lr: f64) -> Result<()> {
    let grad = param
        .grad()
        .ok_or_else(|| Error::MissingGradient(format!("{:?}", param.shape())))?
        .to_vec();
    if moments.m.len() != grad.len() || moments.v.len() != grad.len() {
        return Err(Error::Dimension {
            op: "adamw_update",
            lhs: param.shape().to_vec(),
            rhs: vec![moments.m.len()],
        });
    }
    if t == 0 {
        return Err(Error::Validation("AdamW step counter starts at 1".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    let data = param.data_mut();
    for i in 0..data.len() {
        data[i] *= decay;
        let g = grad[i];
        moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = moments.m[i] / bc1;
        let v_hat = moments.v[i] / bc2;
        data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Optimizer state over every trainable tensor of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    t: u64,
    moments: BTreeMap<ParamId, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Number of steps taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments> {
        self.moments.get(&id)
    }

    /// Number of tensors the optimizer would update.
    pub fn tracked(&self, store: &ParamStore) -> usize {
        store.trainable().count()
    }

    /// Updates every trainable tensor with its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        let ids: Vec<ParamId> = store.trainable().collect();
        for &id in &ids {
            if store.get(id).grad().is_none() {
                return Err(Error::MissingGradient(store.name(id).to_string()));
            }
        }
        self.t += 1;
        for id in ids {
            let param = store.get_mut(id);
            let moments = self.moments.entry(id).or_insert_with(|| Moments::zeros(param.numel()));
            adamw_update(param, moments, &self.config, self.t, lr)?;
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `peak_lr`, then cosine decay to `min_lr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub min_lr: f64,
}

impl LrSchedule {
    pub fn new(peak_lr: f64, warmup_steps: u64, total_steps: u64, min_lr: f64) -> Result<Self> {
        if total_steps == 0 || warmup_steps > total_steps {
            return Err(Error::Validation(format!(
                "need 0 <= warmup ({warmup_steps}) <= total ({total_steps}) and total > 0"
            )));
        }
        if !(0.0..=peak_lr).contains(&min_lr) {
            return Err(Error::Validation(format!(
                "need 0 <= min_lr ({min_lr}) <= peak_lr ({peak_lr})"
            )));
        }
        Ok(Self {
            peak_lr,
            warmup_steps,
            total_steps,
            min_lr,
        })
    }

    pub fn lr_at(&self, t: u64) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::OutOfRange {
                what: "schedule step",
                value: t as usize,
                max: self.total_steps as usize,
            });
        }
        if t < self.warmup_steps {
            return Ok(self.peak_lr * t as f64 / self.warmup_steps as f64);
        }
        let span = self.total_steps - self.warmup_steps;
        if span == 0 {
            return Ok(self.peak_lr);
        }
        let progress = (t - self.warmup_steps) as f64 / span as f64;
        Ok(self.min_lr + (self.peak_lr - self.min_lr) * 0.5 * (1.0 + (PI * progress).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(value: f64, grad: f64) -> Tensor {
        let mut p = Tensor::new(vec![1], vec![value]).unwrap().with_requires_grad();
        p.accumulate_grad(&[grad]).unwrap();
        p
    }

    #[test]
    fn zero_gradient_only_decays() {
        let cfg = AdamWConfig::default();
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        p.zero_grad();
        let before = p.data().to_vec();
        let mut m = Moments::zeros(3);
        adamw_update(&mut p, &mut m, &cfg, 1, 1e-5).unwrap();
        for (a, b) in p.data().iter().zip(&before) {
            assert_eq!(*a, b * (1.0 - 1e-5 * 0.1));
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the update is lr·g/(|g|+ε).
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut p = scalar_param(1.0, 1.0);
        let mut m = Moments::zeros(1);
        adamw_update(&mut p, &mut m, &cfg, 1, 0.1).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!((p.data()[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn second_moment_after_one_step() {
        let cfg = AdamWConfig::default();
        let mut p = scalar_param(0.0, 2.0);
        let mut m = Moments::zeros(1);
        adamw_update(&mut p, &mut m, &cfg, 1, 1e-3).unwrap();
        assert!((m.v[0] - 0.2).abs() < 1e-15);
        assert!((m.m[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_reported() {
        let mut p = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut m = Moments::zeros(1);
        let err = adamw_update(&mut p, &mut m, &AdamWConfig::default(), 1, 0.1);
        assert!(matches!(err, Err(Error::MissingGradient(_))));
    }

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule::new(1e-5, 100, 300, 0.0).unwrap();
        assert_eq!(s.lr_at(0).unwrap(), 0.0);
        assert_eq!(s.lr_at(100).unwrap(), 1e-5);
        assert!((s.lr_at(200).unwrap() - 5e-6).abs() < 1e-20);
        assert!(s.lr_at(300).unwrap().abs() < 1e-20);
        assert!(s.lr_at(301).is_err());
    }

    #[test]
    fn schedule_continuous_at_warmup_boundary() {
        let s = LrSchedule::new(3e-3, 50, 500, 1e-4).unwrap();
        let left = s.lr_at(49).unwrap();
        let at = s.lr_at(50).unwrap();
        let right = s.lr_at(51).unwrap();
        assert!((at - left).abs() <= 3e-3 / 50.0 + 1e-15);
        assert!((at - right).abs() < 1e-6);
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(LrSchedule::new(1e-5, 10, 5, 0.0).is_err());
        assert!(LrSchedule::new(1e-5, 0, 0, 0.0).is_err());
        assert!(LrSchedule::new(1e-5, 0, 10, 1e-4).is_err());
    }
}
