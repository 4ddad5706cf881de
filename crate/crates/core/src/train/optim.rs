use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

/// Cosine annealing from `eta_max` at epoch 0 to `eta_min` at
/// `total_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub eta_max: f64,
    pub eta_min: f64,
    pub total_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            eta_max: 1e-5,
            eta_min: 1e-6,
            total_epochs: 100,
        }
    }
}

/// Learning rate for epoch `e`; epochs past the end stay at `eta_min`.
pub fn cosine_lr(e: usize, s: &LrSchedule) -> f64 {
    if s.total_epochs == 0 || e >= s.total_epochs {
        return if e == 0 && s.total_epochs == 0 {
            s.eta_max
        } else {
            s.eta_min
        };
    }
    let frac = e as f64 / s.total_epochs as f64;
    s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 2e-4,
        }
    }
}

/// Adam with decoupled weight decay. Moments are kept for trainable
/// parameters only.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<T>) -> Self {
        let moments = store
            .iter()
            .map(|(_, p)| {
                p.trainable
                    .then(|| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())))
            })
            .collect();
        Self { cfg, moments, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr`. Every trainable
    /// parameter must carry a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if store.len() != self.moments.len() {
            return Err(Error::Contract(
                "optimizer was built for a different parameter set".into(),
            ));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
            return Err(Error::Contract(format!("parameter {} has no gradient", p.name)));
        }
        self.step += 1;
        let c = self.cfg;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let f = T::from_f64_lossy;
        let (b1, b2, eps) = (f(c.beta1), f(c.beta2), f(c.eps));
        let step_size = f(lr / bc1);
        let inv_sqrt_bc2 = f(1.0 / bc2.sqrt());
        let shrink = f(1.0 - lr * c.weight_decay);
        for (p, slot) in store.iter_mut().zip(&mut self.moments) {
            let (Some((m, v)), Some(g)) = (slot.as_mut(), p.grad.as_ref()) else {
                continue;
            };
            let it = p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((w, &g), (m, v)) in it {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *w *= shrink;
                *w -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let total: f64 = store
        .iter()
        .filter_map(|(_, p)| p.grad.as_ref())
        .flat_map(|g| g.data().iter().map(|v| v.to_f64_lossy().powi(2)))
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        let s = T::from_f64_lossy(max_norm / total);
        for p in store.iter_mut() {
            if let Some(g) = p.grad.as_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    total
}
