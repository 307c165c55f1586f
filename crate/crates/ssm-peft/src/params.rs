//! Named parameter storage shared by models, optimizers, and checkpoints.

use std::collections::BTreeMap;

use crate::tensor::{Result, Tensor, TensorError};

/// Ordered map from parameter name to value. Iteration order is the sorted
/// name order, which keeps everything downstream (checkpoints, optimizer
/// state, gradient maps) deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        self.entries.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| TensorError::Invalid(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| TensorError::Invalid(format!("unknown parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries across all tensors.
    pub fn total_elements(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Copies every tensor from `other` into matching names of `self`.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, value) in other.iter() {
            let slot = self.get_mut(name)?;
            if slot.shape() != value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "assign_from",
                    lhs: slot.shape().to_vec(),
                    rhs: value.shape().to_vec(),
                });
            }
            *slot = value.clone();
        }
        Ok(())
    }
}

impl FromIterator<(String, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamStore { entries: iter.into_iter().collect() }
    }
}
