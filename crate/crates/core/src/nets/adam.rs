use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay applied once per step.
    pub lr_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            lr_decay: 0.999f64.powf(1.0 / 8.0),
            clip_norm: None,
        }
    }
}

impl AdamConfig {
    /// Learning rate used for the update at zero-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        lr_schedule(self.lr, self.lr_decay, step)
    }
}

pub fn lr_schedule(lr0: f64, decay: f64, step: u64) -> f64 {
    lr0 * decay.powf(step as f64)
}

/// First and second moment estimates plus the number of updates taken.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|t| t.data())
        .map(|&v| (v as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = (max_norm / norm) as f32;
        for t in grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

/// One AdamW update with decoupled weight decay:
/// `p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)`.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Shape(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient of {name} has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    state.step += 1;
    let k = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(k);
    let bc2 = 1.0 - cfg.beta2.powi(k);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let gv = gv as f64;
            let mn = cfg.beta1 * *mv as f64 + (1.0 - cfg.beta1) * gv;
            let vn = cfg.beta2 * *vv as f64 + (1.0 - cfg.beta2) * gv * gv;
            *mv = mn as f32;
            *vv = vn as f32;
            let upd = (mn / bc1) / ((vn / bc2).sqrt() + cfg.eps) + cfg.weight_decay * *pv as f64;
            *pv = (*pv as f64 - lr * upd) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f32) -> (ParamStore, BTreeMap<String, Tensor>) {
        let mut p = ParamStore::new();
        p.insert(name, Tensor::scalar(0.5));
        let mut g = BTreeMap::new();
        g.insert(name.to_string(), Tensor::scalar(v));
        (p, g)
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let (mut p, g) = one("w", 0.0);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let before = p.clone();
        let mut st = AdamState::default();
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st, 1e-3, &cfg).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_magnitude() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(0.0));
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::scalar(1.0));
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &g, &mut AdamState::default(), 1e-3, &cfg).unwrap();
        let d = p.get("w").unwrap().data()[0] as f64;
        // Exact value -lr / (1 + eps), stored to f32 precision.
        let exact = -1e-3 / (1.0 + 1e-8);
        assert!((d - exact).abs() < 2e-10, "{d}");
        assert!((d + 9.99999e-4).abs() < 2e-9, "{d}");
    }

    #[test]
    fn schedule_after_eight_steps() {
        let cfg = AdamConfig::default();
        assert!((cfg.lr_at(8) - 5e-5 * 0.999).abs() < 1e-18);
        assert_eq!(cfg.lr_at(0), 5e-5);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (mut p, _) = one("w", 1.0);
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::zeros(&[2]));
        assert!(adam_step(&mut p, &g, &mut AdamState::default(), 1e-3, &AdamConfig::default()).is_err());
        let mut g = BTreeMap::new();
        g.insert("nope".to_string(), Tensor::scalar(1.0));
        assert!(adam_step(&mut p, &g, &mut AdamState::default(), 1e-3, &AdamConfig::default()).is_err());
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), Tensor::vector(vec![3.0, 4.0]));
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g["a"].l2() - 1.0).abs() < 1e-6);
    }
}
