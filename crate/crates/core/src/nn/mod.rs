//! Shared neural-network machinery: tape autodiff, named parameter sets,
//! the Adam optimizer, JSON checkpoints, and a central finite-difference
//! gradient checker.

mod tape;

pub use tape::{causal_mask, Gradients, Tape, Var};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("training error: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("length error: sequence of {got} tokens exceeds maximum {max}")]
    SequenceTooLong { got: usize, max: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Ordered, named collection of parameter tensors.
///
/// Models register tensors once and refer to them by the returned id; the
/// optimizer, checkpoints, and the gradient checker all iterate the set
/// generically in registration order.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Index of a tensor within a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in the set's registration order; also the position of the
    /// corresponding [`Var`] returned by [`ParamSet::bind`].
    pub fn index(self) -> usize {
        self.0
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// Rebuild the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index =
            self.names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    }

    /// Load every tensor onto a tape as a leaf, in registration order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Collect gradients for bound leaves, zero-filled where absent.
    pub fn collect_grads(&self, vars: &[Var], grads: &mut Gradients) -> Vec<Array2<f64>> {
        self.tensors
            .iter()
            .zip(vars)
            .map(|(t, &v)| grads.take(v).unwrap_or_else(|| Array2::zeros(t.raw_dim())))
            .collect()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

/// Adam with bias correction; the de-facto defaults β₁=0.9, β₂=0.999.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &ParamSet) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
            v: params.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
        }
    }

    /// One update step; `grads` must align with the param set's order.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Array2<f64>]) {
        assert_eq!(grads.len(), params.tensors.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((tensor, grad), (m, v)) in params
            .tensors
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for ((w, &g), (mi, vi)) in
                tensor.iter_mut().zip(grad.iter()).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Self-describing checkpoint container: parameters plus free-form
/// metadata (model config, vocabulary hash).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: String,
    pub metadata: serde_json::Value,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String, NnError> {
        serde_json::to_string(self).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let mut cp: Checkpoint =
            serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        cp.params.reindex();
        Ok(cp)
    }
}

/// Maximum relative error between analytic gradients and central finite
/// differences, over every scalar parameter.
///
/// Relative error uses `|a − f| / max(|a| + |f|, 1e-6)` so near-zero
/// gradients do not blow up the ratio.
pub fn finite_difference_check(
    params: &mut ParamSet,
    analytic: &[Array2<f64>],
    mut loss_fn: impl FnMut(&ParamSet) -> f64,
) -> f64 {
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    for id in 0..params.tensors.len() {
        let (rows, cols) = params.tensors[id].dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = params.tensors[id][(r, c)];
                params.tensors[id][(r, c)] = orig + h;
                let up = loss_fn(params);
                params.tensors[id][(r, c)] = orig - h;
                let down = loss_fn(params);
                params.tensors[id][(r, c)] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = analytic[id][(r, c)];
                let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
        }
    }
    max_rel
}

/// Glorot-style uniform initialization.
pub fn glorot_init(
    rows: usize,
    cols: usize,
    rng: &mut impl rand::Rng,
) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}
