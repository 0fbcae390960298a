use super::tensor::{Scalar, Tensor};
use crate::error::{DdnError, Result};

/// Handle to a tensor held by a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter map.
///
/// Trainable tensors have `requires_grad` set; buffers such as batch-norm
/// running statistics are stored alongside them with the flag cleared and are
/// never touched by the optimizer.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(trainable));
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| self.tensors[id.0].requires_grad())
            .collect()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.requires_grad())
            .map(Tensor::len)
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Replaces the values of an existing entry, keeping its flags.
    pub fn set_values(&mut self, id: ParamId, values: &[T]) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if t.len() != values.len() {
            return Err(DdnError::dim(format!(
                "parameter '{}' has {} values, got {}",
                self.names[id.0],
                t.len(),
                values.len()
            )));
        }
        t.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}
