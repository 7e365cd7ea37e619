//! Named parameter collections with prunability flags.
//!
//! Parameters are stored in a `BTreeMap`, so every iteration over a
//! `ParamSet` is in lexicographic name order — the canonical order used for
//! deterministic tie-breaking throughout the crate.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One named tensor. Weight matrices and convolution kernels are prunable;
/// biases, normalization parameters, and embeddings are not.
#[derive(Clone, Debug)]
pub struct ParamTensor<S> {
    pub values: Tensor<S>,
    pub prunable: bool,
}

/// An ordered collection of named parameter tensors.
#[derive(Clone, Debug)]
pub struct ParamSet<S> {
    entries: BTreeMap<String, ParamTensor<S>>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Insert a tensor under a unique name. Duplicate names are a
    /// construction bug in the calling model code.
    pub fn insert(&mut self, name: &str, values: Tensor<S>, prunable: bool) {
        let prev = self
            .entries
            .insert(name.to_string(), ParamTensor { values, prunable });
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.entries
            .get(name)
            .map(|p| &p.values)
            .ok_or_else(|| CoreError::UnknownName(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.values)
            .ok_or_else(|| CoreError::UnknownName(name.to_string()))
    }

    /// Names in lexicographic order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamTensor<S>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Names of prunable tensors, lexicographic.
    pub fn prunable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, p)| p.prunable)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn n_tensors(&self) -> usize {
        self.entries.len()
    }

    /// Total scalar count across all tensors.
    pub fn n_params(&self) -> usize {
        self.entries.values().map(|p| p.values.len()).sum()
    }

    /// Total scalar count across prunable tensors.
    pub fn n_prunable(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.prunable)
            .map(|p| p.values.len())
            .sum()
    }

    /// A set with the same names/shapes/flags, all values zero. Used for
    /// gradient accumulators and optimizer state.
    pub fn zeros_like(&self) -> ParamSet<S> {
        let entries = self
            .entries
            .iter()
            .map(|(k, p)| {
                (
                    k.clone(),
                    ParamTensor {
                        values: Tensor::zeros(p.values.shape().to_vec()),
                        prunable: p.prunable,
                    },
                )
            })
            .collect();
        ParamSet { entries }
    }

    /// Elementwise `self += other` over identically named tensors.
    pub fn add_assign(&mut self, other: &ParamSet<S>) {
        debug_assert_eq!(self.entries.len(), other.entries.len());
        for ((ka, pa), (kb, pb)) in self.entries.iter_mut().zip(other.entries.iter()) {
            debug_assert_eq!(ka, kb);
            pa.values.add_assign(&pb.values);
        }
    }

    /// Elementwise `self *= c`.
    pub fn scale(&mut self, c: S) {
        for p in self.entries.values_mut() {
            p.values.scale(c);
        }
    }

    /// Convert every value through f64 into another scalar type.
    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        let entries = self
            .entries
            .iter()
            .map(|(k, p)| {
                (
                    k.clone(),
                    ParamTensor {
                        values: p.values.cast::<T>(),
                        prunable: p.prunable,
                    },
                )
            })
            .collect();
        ParamSet { entries }
    }

    /// Largest |value| across all tensors, as f64.
    pub fn max_abs(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|p| p.values.iter())
            .map(|v| v.to_f64().abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|p| p.values.all_finite())
    }
}
