//! Named parameter storage shared by the model, the optimizer and the
//! checkpoint format.
//!
//! Layers hold [`ParamId`] handles into one [`ParamStore`]; a forward
//! pass registers parameters on the tape as leaves, and `Tape::backward`
//! plus [`crate::tape::Tape::accumulate_param_grads`] flow gradients
//! back into the store. Insertion order is fixed, which keeps the
//! optimizer, checkpoints and reports deterministic.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    /// Whether the 0.01 L2 penalty applies (weight matrices yes,
    /// biases and embeddings no).
    pub weight_decay: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, weight_decay: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name '{name}'"
        );
        let grad = vec![0.0; value.numel()];
        let id = self.entries.len();
        self.by_name.insert(name.clone(), id);
        self.entries.push(Param {
            name,
            value,
            grad,
            weight_decay,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.by_name.get(name).map(|&i| &self.entries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `2*lambda*W` to the gradient of every weight-decayed
    /// parameter (the gradient of `lambda * ||W||^2`).
    pub fn apply_l2(&mut self, lambda: f64) {
        for p in &mut self.entries {
            if p.weight_decay {
                for (g, w) in p.grad.iter_mut().zip(p.value.data()) {
                    *g += 2.0 * lambda * w;
                }
            }
        }
    }

    /// Snapshot of all parameter values, in insertion order.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    /// Restores values captured by [`ParamStore::snapshot`].
    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) -> Result<()> {
        for (name, value) in snapshot {
            let idx = *self
                .by_name
                .get(name)
                .ok_or_else(|| Error::contract(format!("unknown parameter '{name}' in snapshot")))?;
            let p = &mut self.entries[idx];
            if p.value.shape() != value.shape() {
                return Err(Error::contract(format!(
                    "snapshot shape {:?} does not match parameter '{}' shape {:?}",
                    value.shape(),
                    name,
                    p.value.shape()
                )));
            }
            p.value = value.clone();
        }
        Ok(())
    }
}
