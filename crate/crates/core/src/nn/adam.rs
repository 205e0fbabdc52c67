use std::collections::BTreeMap;

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Moment estimates and step count for one optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// One bias-corrected Adam update of every parameter that has a gradient.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        for (name, g) in grads.iter() {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
            if store.get(name)?.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient of `{name}` has the wrong shape")));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads.iter() {
            let (r, c) = g.shape();
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(r, c));
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(r, c));
            let p = store.get_mut(name)?;
            for (((p, m), v), &g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads(name: &str, g: Tensor) -> Gradients {
        let mut out = Gradients::default();
        out.accumulate(name, g);
        out
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::row_vector(vec![1.0, 1.0, 1.0]));
        let mut adam = AdamState::new();
        adam.step(&mut store, &grads("x", Tensor::row_vector(vec![3.0, -0.02, 1e3])), 0.01)
            .unwrap();
        let x = store.get("x").unwrap().data();
        assert!((x[0] - 0.99).abs() < 1e-8);
        assert!((x[1] - 1.01).abs() < 1e-6);
        assert!((x[2] - 0.99).abs() < 1e-8);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_and_zero_rate_leave_parameters_alone() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::row_vector(vec![0.3, -0.4]));
        let before = store.clone();
        let mut adam = AdamState::new();
        for _ in 0..20 {
            adam.step(&mut store, &grads("x", Tensor::zeros(1, 2)), 0.1).unwrap();
        }
        assert_eq!(store, before);
        for _ in 0..20 {
            adam.step(&mut store, &grads("x", Tensor::row_vector(vec![1.0, -2.0])), 0.0)
                .unwrap();
        }
        assert_eq!(store, before);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(0.0));
        let mut adam = AdamState::new();
        for _ in 0..500 {
            let x = store.get("x").unwrap().item();
            adam.step(&mut store, &grads("x", Tensor::scalar(2.0 * (x - 3.0))), 0.05)
                .unwrap();
        }
        assert!((store.get("x").unwrap().item() - 3.0).abs() <= 0.05);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut store = ParamStore::new();
        store.insert("psi.0.weight", Tensor::scalar(1.0));
        let before = store.clone();
        let mut adam = AdamState::new();
        let err = adam
            .step(&mut store, &grads("psi.0.weight", Tensor::scalar(f64::NAN)), 0.1)
            .unwrap_err();
        assert!(err.to_string().contains("psi.0.weight"));
        assert_eq!(store, before);
        assert_eq!(adam.t, 0);
    }
}
