use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::tensor::Tensor;

/// Handle to a tensor owned by a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors. Names are dotted paths; the first segments act as
/// namespaces (`encoder.base.`, `encoder.adapter.`, `resampler.`, `lm.`).
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    names: Vec<String>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. New parameters are trainable.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Validation(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.tensors.len());
        self.tensors.push(tensor.with_requires_grad());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    /// Swaps in a new tensor (possibly of a different shape), keeping the
    /// trainability flag.
    pub fn replace(&mut self, id: ParamId, tensor: Tensor) {
        let trainable = self.tensors[id.0].requires_grad();
        let mut tensor = tensor;
        tensor.set_requires_grad(trainable);
        self.tensors[id.0] = tensor;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> + '_ {
        self.tensors
            .iter()
            .enumerate()
            .map(move |(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |id| self.names[id.0].starts_with(prefix))
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.tensors[id.0].requires_grad())
    }

    pub fn set_trainable_prefix(&mut self, prefix: &str, flag: bool) {
        for i in 0..self.tensors.len() {
            if self.names[i].starts_with(prefix) {
                self.tensors[i].set_requires_grad(flag);
            }
        }
    }

    /// Element count of every tensor whose name starts with `prefix`.
    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.with_prefix(prefix).map(|id| self.get(id).numel()).sum()
    }

    /// Concatenated little-endian payload of a namespace, for byte comparisons.
    pub fn snapshot_bytes(&self, prefix: &str) -> Vec<u8> {
        self.with_prefix(prefix)
            .flat_map(|id| self.get(id).to_le_bytes())
            .collect()
    }

    /// Resets gradients of trainable tensors to zero.
    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            if t.requires_grad() {
                t.zero_grad();
            } else {
                t.clear_grad();
            }
        }
    }

    /// Adds `scale ·` each parameter gradient in `grads` into the store.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        for (id, g) in grads.params() {
            let t = &mut self.tensors[id.0];
            if !t.requires_grad() {
                continue;
            }
            if scale == 1.0 {
                t.accumulate_grad(g)?;
            } else {
                let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
                t.accumulate_grad(&scaled)?;
            }
        }
        Ok(())
    }
}
