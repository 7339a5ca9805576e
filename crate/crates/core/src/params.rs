//! Named trainable parameters with gradient accumulators.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

/// A set of parameters owned by one model or critic.
///
/// Tape nodes created through [`ParamStore::var`] remember which store they
/// came from, so [`ParamStore::accumulate`] only picks up its own gradients
/// even when several stores share one tape.
#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
    has_grad: Vec<bool>,
    index: HashMap<String, usize>,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.clone(),
            grads: self.grads.clone(),
            has_grad: self.has_grad.clone(),
            index: self.index.clone(),
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Serializable snapshot of a store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensors(pub Vec<(String, Tensor)>);

impl ParamStore {
    pub fn new() -> Self {
        Self {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            has_grad: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter `{name}`")));
        }
        let id = self.values.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.grads.push(vec![0.0; value.len()]);
        self.has_grad.push(false);
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// Glorot-uniform `rows x cols` weight.
    pub fn glorot<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> Result<ParamId> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        self.add(name, Tensor::matrix(rows, cols, data))
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.has_grad[id.0].then(|| self.grads[id.0].as_slice())
    }

    pub(crate) fn grad_parts_mut(&mut self, id: ParamId) -> Option<(&mut Tensor, &[f64])> {
        if self.has_grad[id.0] {
            Some((&mut self.values[id.0], &self.grads[id.0]))
        } else {
            None
        }
    }

    /// Places parameter `id` on `tape` as a trainable leaf.
    pub fn var(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param_node(self.values[id.0].clone(), self.uid, id.0)
    }

    /// Adds this store's gradients from the last backward sweep of `tape`.
    pub fn accumulate(&mut self, tape: &Tape) {
        for (store, id, g) in tape.param_grads() {
            if store != self.uid {
                continue;
            }
            for (a, b) in self.grads[id].iter_mut().zip(g) {
                *a += b;
            }
            self.has_grad[id] = true;
        }
    }

    pub fn zero_grad(&mut self) {
        for (g, h) in self.grads.iter_mut().zip(self.has_grad.iter_mut()) {
            g.iter_mut().for_each(|v| *v = 0.0);
            *h = false;
        }
    }

    pub fn any_grad(&self) -> bool {
        self.has_grad.iter().any(|&h| h)
    }

    /// SHA-256 over names and the exact bit patterns of every value.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, value) in self.names.iter().zip(&self.values) {
            h.update(name.as_bytes());
            for d in value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn snapshot(&self) -> NamedTensors {
        NamedTensors(self.names.iter().cloned().zip(self.values.iter().cloned()).collect())
    }

    /// Overwrites values from a snapshot with identical names and shapes.
    pub fn load(&mut self, snap: &NamedTensors) -> Result<()> {
        if snap.0.len() != self.values.len() {
            return Err(Error::contract(format!(
                "snapshot has {} tensors, store has {}",
                snap.0.len(),
                self.values.len()
            )));
        }
        for (name, t) in &snap.0 {
            let id = self
                .id(name)
                .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
            if self.values[id.0].shape() != t.shape() {
                return Err(Error::shape(format!("parameter `{name}` shape mismatch")));
            }
            self.values[id.0] = t.clone();
        }
        Ok(())
    }
}
