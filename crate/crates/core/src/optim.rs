//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{CanError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One update of every parameter from its current `grad`. Gradients are
    /// left in place; the caller zeroes them.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(CanError::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
        }
        if self.m.len() != store.len() {
            return Err(CanError::Shape(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for ((p, m), v) in store.iter_mut().zip(&self.m).zip(&self.v) {
            if p.grad.shape() != m.shape() || v.shape() != m.shape() {
                return Err(CanError::Shape(format!(
                    "moment shape {:?} vs gradient {:?} for {}",
                    m.shape(),
                    p.grad.shape(),
                    p.name
                )));
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let values = p.value.data_mut();
            for (((w, &g), mi), vi) in values
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64, g: f64) -> ParamStore {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::from_vec(vec![p])).unwrap();
        store.get_mut(id).grad = Tensor::from_vec(vec![g]);
        store
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut store = scalar_store(1.5, 0.0);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut store, 0.1).unwrap();
        }
        assert_eq!(store.iter().next().unwrap().1.value.data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = scalar_store(1.0, 1.0);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.step(&mut store, 0.1).unwrap();
        let p = store.iter().next().unwrap().1.value.data()[0];
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        assert!((p - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn repeated_gradient_step_bounded_by_lr() {
        let mut store = scalar_store(1.0, 1.0);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.step(&mut store, 0.1).unwrap();
        let before = store.iter().next().unwrap().1.value.data()[0];
        adam.step(&mut store, 0.1).unwrap();
        let after = store.iter().next().unwrap().1.value.data()[0];
        assert_eq!(adam.t, 2);
        assert!((before - after).abs() <= 0.1 + 1e-12);
        assert!(after < before);
    }

    #[test]
    fn rejects_bad_lr_and_shape_mismatch() {
        let mut store = scalar_store(1.0, 1.0);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        assert!(adam.step(&mut store, 0.0).is_err());
        adam.m[0] = Tensor::zeros(&[2]);
        assert!(adam.step(&mut store, 0.1).is_err());
        assert_eq!(adam.t, 0);
    }
}
