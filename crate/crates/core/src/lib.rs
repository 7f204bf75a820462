//! Structured pruning through catalyst variables.
//!
//! The crate implements a pruning method built around an extended parameter
//! space: each filter (row) of a target weight matrix `W` is paired with a
//! learnable diagonal entry `D_ii`, and sparsity is driven by minimizing the
//! regularizer `‖DW‖₂,₁ = Σᵢ |D_ii|·‖W_{i,:}‖₂` alongside the task loss.
//! Zeros of the regularizer with `D ≠ 0` sit exactly over the set of weight
//! matrices with a vanishing filter, so channels can be removed without
//! changing the realized function.
//!
//! The pieces:
//!
//! - [`nn`]: a minimal dense MLP with exact reverse-mode gradients and SGD.
//! - [`catalyst`]: the catalyst diagonals, the learnable activation
//!   `ψ_{D,D̄}(x) = Dx − D̄x + σ(x)`, the function-preserving `embed`, and the
//!   regularizer with its analytic gradient.
//! - [`prune`]: threshold-based channel selection and the function-preserving
//!   contraction that folds pruned channels into the next layer's bias.
//! - [`geometry`]: the pruning-invariant set, distances to it, and witness
//!   constructions tying the regularizer's sublevel sets to its neighborhood.
//! - [`dynamics`]: a standalone lab for the gradient-descent dynamics of
//!   `‖dM‖₂`, the closed-form ratio recurrence, and phase-diagram sweeps.
//! - [`pipeline`]: the two-phase regularize-and-prune training loop.
//! - [`data`], [`report`], [`config`]: synthetic datasets, CSV/JSON run
//!   artifacts, MACs/parameter accounting, and the experiment driver.
//! - [`verify`]: the sampling-based invariant suite behind `catalyst verify`.
//!
//! With the default `parallel` feature, sweeps and sampling checks fan out
//! over rayon; disabling it yields a fully sequential build with identical
//! results.

pub mod catalyst;
pub mod config;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod nn;
mod par;
pub mod pipeline;
pub mod prune;
pub mod report;
pub mod verify;

pub use error::{Error, Result};
