//! Minimal dense neural-network core.
//!
//! The central object is the two-layer [`Submodule`]
//! `x ↦ b_A + A·σ(b_W + W·x)`: `W` is the pruning target whose rows are the
//! filters, and `A` is the next layer that consumes the hidden channels. A
//! [`model::Model`] wraps one submodule with optional dense layers on either
//! side and provides exact reverse-mode gradients for every parameter.

mod model;
mod sgd;

pub use model::{
    accuracy_percent, softmax_cross_entropy, DenseLayer, Model, ModelGrads, SubmoduleSlot,
};
pub use sgd::{sgd_update, sgd_update_momentum, Sgd};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Element-wise activation tag. Kept as a closed enum so the learnable
/// activation `ψ_{D,D̄}` composes with it channel-wise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative at the pre-activation. ReLU uses the subgradient
    /// convention σ'(0) = 0.
    #[inline]
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }
}

/// The two-layer block `x ↦ b_A + A·σ(b_W + W·x)`.
///
/// Rows of `w` are the filters; channel `i` of the hidden vector is governed
/// by filter `i` and consumed by column `i` of `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Submodule {
    /// Target-layer weight, `n_w × n_i`.
    pub w: Array2<f64>,
    /// Target-layer bias, length `n_w`.
    pub b_w: Array1<f64>,
    /// Next-layer weight, `n_a × n_w`.
    pub a: Array2<f64>,
    /// Next-layer bias, length `n_a`.
    pub b_a: Array1<f64>,
    pub sigma: Activation,
}

impl Submodule {
    pub fn new(
        w: Array2<f64>,
        b_w: Array1<f64>,
        a: Array2<f64>,
        b_a: Array1<f64>,
        sigma: Activation,
    ) -> Result<Self> {
        if w.nrows() != b_w.len() {
            return Err(Error::Shape(format!(
                "w has {} rows but b_w has {} entries",
                w.nrows(),
                b_w.len()
            )));
        }
        if a.ncols() != w.nrows() {
            return Err(Error::Shape(format!(
                "a has {} columns but w has {} rows",
                a.ncols(),
                w.nrows()
            )));
        }
        if a.nrows() != b_a.len() {
            return Err(Error::Shape(format!(
                "a has {} rows but b_a has {} entries",
                a.nrows(),
                b_a.len()
            )));
        }
        Ok(Self { w, b_w, a, b_a, sigma })
    }

    /// Input dimension `n_i`.
    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    /// Number of hidden channels `n_w` (prunable dimension).
    pub fn hidden_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Output dimension `n_a`.
    pub fn output_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Evaluates `b_A + A·σ(b_W + W·x)`.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "submodule expects input of length {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let h = &self.w.dot(&x) + &self.b_w;
        let s = h.mapv(|v| self.sigma.apply(v));
        Ok(&self.a.dot(&s) + &self.b_a)
    }
}

/// Per-row Euclidean norms of a weight matrix: entry `i` is `‖W_{i,:}‖₂`.
pub fn filter_norms(w: ArrayView2<f64>) -> Array1<f64> {
    Array1::from_iter(w.rows().into_iter().map(|r| r.dot(&r).sqrt()))
}

/// An ordered set of channel indices to REMOVE. The kept channels are the
/// complement; that convention is fixed crate-wide.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneSet {
    indices: Vec<usize>,
}

impl PruneSet {
    /// Builds a prune set, validating range and rejecting duplicates.
    pub fn new(indices: impl IntoIterator<Item = usize>, n_channels: usize) -> Result<Self> {
        let mut indices: Vec<usize> = indices.into_iter().collect();
        indices.sort_unstable();
        for pair in indices.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::Config(format!("duplicate prune index {}", pair[0])));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= n_channels {
                return Err(Error::IndexOutOfRange {
                    index: last,
                    len: n_channels,
                });
            }
        }
        Ok(Self { indices })
    }

    pub fn empty() -> Self {
        Self { indices: Vec::new() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Kept channel indices, in increasing order.
    pub fn complement(&self, n_channels: usize) -> Vec<usize> {
        (0..n_channels).filter(|i| !self.contains(*i)).collect()
    }
}

/// Anything that can evaluate a vector-in, vector-out forward pass. Used by
/// the function-preservation verifier to compare models across a prune.
pub trait Forward {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>>;
}

impl Forward for Submodule {
    fn input_dim(&self) -> usize {
        self.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.output_dim()
    }
    fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Submodule::forward(self, x)
    }
}
