//! Named parameter tensors.

use alloc::string::String;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Registers a tensor and returns its slot.
    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, slot: usize) -> &Tensor<T> {
        &self.tensors[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Tensor<T> {
        &mut self.tensors[slot]
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn shapes(&self) -> Vec<&[usize]> {
        self.tensors.iter().map(Tensor::shape).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Pushes every parameter onto the tape; the result is indexed by slot.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<Vec<Var>> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(slot, t)| tape.param(slot, t.clone()))
            .collect()
    }

    /// Replaces tensors by name; every name must already exist with the same shape.
    pub fn assign(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        let slot = self
            .slot(name)
            .ok_or_else(|| Error::Config(alloc::format!("unknown parameter `{name}`")))?;
        if self.tensors[slot].shape() != t.shape() {
            return Err(Error::Shape {
                op: "assign",
                detail: alloc::format!("`{name}`: {:?} vs {:?}", self.tensors[slot].shape(), t.shape()),
            });
        }
        self.tensors[slot] = t;
        Ok(())
    }

    /// Position of a flat coordinate as `(slot, offset)`.
    pub fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (slot, t) in self.tensors.iter().enumerate() {
            if flat < t.len() {
                return (slot, flat);
            }
            flat -= t.len();
        }
        panic!("flat index out of range");
    }
}

impl ParamStore<f32> {
    /// SHA-256 over names, shapes and little-endian values.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &x in t.data() {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}
