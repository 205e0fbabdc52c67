use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors. Names are `collection.path`, e.g. `psi.0.weight`;
/// iteration is in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Graph(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Graph(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters under a collection prefix.
    pub fn num_values(&self, collection: &str) -> usize {
        self.iter()
            .filter(|(k, _)| in_collection(k, collection))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Copies every tensor of `collection` from `other`.
    pub fn copy_collection(&mut self, other: &ParamStore, collection: &str) {
        for (k, v) in other.iter().filter(|(k, _)| in_collection(k, collection)) {
            self.params.insert(k.to_string(), v.clone());
        }
    }
}

pub(crate) fn in_collection(name: &str, collection: &str) -> bool {
    name.strip_prefix(collection)
        .is_some_and(|rest| rest.is_empty() || rest.starts_with('.'))
}

/// Gradients of a scalar with respect to named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub(crate) fn accumulate(&mut self, name: &str, grad: Tensor) {
        match self.grads.get_mut(name) {
            Some(g) => g.add_assign(&grad),
            None => {
                self.grads.insert(name.to_string(), grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Keeps only gradients of parameters in `collection`.
    pub fn restrict(mut self, collection: &str) -> Self {
        self.grads.retain(|k, _| in_collection(k, collection));
        self
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.values().map(Tensor::squared_norm).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.grads.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collections_match_whole_prefix_segments() {
        assert!(in_collection("psi.0.weight", "psi"));
        assert!(in_collection("psi", "psi"));
        assert!(!in_collection("psix.0", "psi"));
        assert!(!in_collection("phi.0", "psi"));
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut g = Gradients::default();
        g.accumulate("a", Tensor::row_vector(vec![3.0, 4.0]));
        assert_eq!(g.clip_global_norm(1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        assert_eq!(g.clip_global_norm(10.0), g.global_norm());
    }
}
