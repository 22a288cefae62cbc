use std::collections::HashMap;

use super::tape::Gradients;
use super::value::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named tensor owned by a model.
///
/// Non-trainable entries are buffers such as normalization running
/// statistics: they are checkpointed but never receive gradients.
#[derive(Clone, Debug)]
pub struct Param<S: Scalar = f64> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Option<Tensor<S>>,
    pub trainable: bool,
}

/// Ordered collection of named parameters and buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S: Scalar = f64> {
    entries: Vec<Param<S>>,
    by_name: HashMap<String, ParamId>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { entries: Vec::new(), by_name: HashMap::new() }
    }

    fn insert(&mut self, name: &str, value: Tensor<S>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::contract("param store", format!("duplicate name {name:?}")));
        }
        let id = ParamId(self.entries.len());
        self.entries.push(Param { name: name.to_string(), value, grad: None, trainable });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add(&mut self, name: &str, value: Tensor<S>) -> Result<ParamId> {
        self.insert(name, value, true)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<S>) -> Result<ParamId> {
        self.insert(name, value, false)
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total element count of trainable entries.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Replaces every gradient slot with the gradients of one sweep.
    pub fn set_grads(&mut self, grads: &Gradients<S>) {
        for p in &mut self.entries {
            p.grad = None;
        }
        for (id, g) in grads.params() {
            let p = &mut self.entries[id.0];
            if p.trainable {
                p.grad = Some(g.clone());
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad = None;
        }
    }

    /// Applies buffer updates collected on a tape.
    pub fn apply_stat_updates(&mut self, updates: Vec<(ParamId, Tensor<S>)>) -> Result<()> {
        for (id, value) in updates {
            let p = &mut self.entries[id.0];
            if p.trainable || p.value.shape() != value.shape() {
                return Err(Error::contract("stat update", format!("bad update for {}", p.name)));
            }
            p.value = value;
        }
        Ok(())
    }

    /// Rounds every value to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.entries {
            for x in p.value.data_mut() {
                *x = S::lit(x.as_f64() as f32 as f64);
            }
        }
    }
}
