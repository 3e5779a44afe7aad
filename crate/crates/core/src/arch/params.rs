use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Learnable by the optimizer; running statistics are not.
    pub trainable: bool,
}

/// Ordered, uniquely named model tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidSpec(format!("duplicate parameter name `{name}`")));
        }
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn set(&mut self, id: ParamId, tensor: Tensor) {
        debug_assert_eq!(tensor.shape(), self.entries[id.0].tensor.shape());
        self.entries[id.0].tensor = tensor;
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        self.id(name)
            .map(|id| self.get(id))
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Number of scalar values in trainable tensors.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }
}

/// Allocates named parameters under a dotted prefix while a model is built.
pub(crate) struct Builder<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    /// Kaiming-uniform: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn kaiming(&mut self, name: String, shape: Shape) -> Result<ParamId> {
        let fan_in = (shape.c * shape.h * shape.w).max(1) as f32;
        let bound = (6.0 / fan_in).sqrt();
        let data = (0..shape.numel()).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.store.insert(name, Tensor::from_parts(shape, data), true)
    }

    pub fn constant(&mut self, name: String, shape: Shape, value: f32, trainable: bool) -> Result<ParamId> {
        self.store.insert(name, Tensor::full(shape, value), trainable)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros([1, 1, 1, 1]), true).unwrap();
        assert!(s.insert("a", Tensor::zeros([1, 1, 1, 1]), true).is_err());
        assert!(s.by_name("a").is_ok());
        assert!(matches!(s.by_name("b"), Err(Error::UnknownParameter(_))));
    }
}
