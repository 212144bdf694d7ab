//! Persistent model parameters, bound into a fresh tape each step.

use crate::tensor::{Grads, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    value: Vec<f64>,
    shape: Vec<usize>,
}

/// Owns the trainable weights of a model between training steps.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> ParamId {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            shape,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].value
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar weights.
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Insert every parameter into `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|e| tape.param(e.value.clone(), e.shape.clone()))
            .collect();
        BoundParams { vars }
    }

    /// Flattened copy of all weights, in registration order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for e in &self.entries {
            out.extend_from_slice(&e.value);
        }
        out
    }

    /// Overwrite all weights from a flat buffer (inverse of [`flat`]).
    pub fn set_flat(&mut self, flat: &[f64]) {
        debug_assert_eq!(flat.len(), self.total_len());
        let mut off = 0;
        for e in self.entries.iter_mut() {
            let n = e.value.len();
            e.value.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }
}

/// Tape handles for one forward pass, parallel to the store.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient of each parameter, zeros where the loss did not reach it.
    pub fn gradients(&self, tape: &Tape, grads: &Grads) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| grads.get_or_zero(v, tape.numel(v)))
            .collect()
    }
}
