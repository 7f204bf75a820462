//! Phase-diagram sweeps over `(c₀, λ, α)` grids.
//!
//! Each grid point is one independent trajectory, so the sweep fans out
//! across threads under the `parallel` feature; results are identical to the
//! sequential path because every trajectory derives its direction vector
//! from its own index.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;

use super::{simulate_trajectory, DynamicsState, LambdaSchedule, Outcome, SimOptions};

#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub c0: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Dimension of the vector side `M`.
    pub dim: usize,
    pub max_steps: u64,
    pub seed: u64,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        self.c0.len() * self.lambda.len() * self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn point(&self, idx: usize) -> (f64, f64, f64) {
        let n_l = self.lambda.len();
        let n_a = self.alpha.len();
        let c0 = self.c0[idx / (n_l * n_a)];
        let lambda = self.lambda[(idx / n_a) % n_l];
        let alpha = self.alpha[idx % n_a];
        (c0, lambda, alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub c0: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub outcome: Outcome,
    pub steps_to_exit: u64,
    pub final_c: f64,
}

fn run_point(grid: &SweepGrid, idx: usize) -> SweepRecord {
    let (c0, lambda, alpha) = grid.point(idx);
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    rng.set_stream(idx as u64);
    // Random unit direction; only magnitudes matter for the ratio.
    let mut m = Array1::from_shape_fn(grid.dim.max(1), |_| rng.gen_range(-1.0f64..1.0));
    let norm = m.dot(&m).sqrt();
    if norm == 0.0 {
        m[0] = 1.0;
    } else {
        m.mapv_inplace(|v| v / norm);
    }
    let state = DynamicsState::new(c0, m, alpha, LambdaSchedule::Constant(lambda))
        .expect("grid values validated by caller");
    let opts = SimOptions {
        max_steps: grid.max_steps,
        continue_past_exit: false,
        record_every: 0,
    };
    let traj = simulate_trajectory(state, &opts);
    SweepRecord {
        c0,
        lambda,
        alpha,
        outcome: traj.outcome,
        steps_to_exit: traj.steps_to_exit,
        final_c: traj.final_c,
    }
}

/// Runs every grid point; parallel under the `parallel` feature.
pub fn run_sweep(grid: &SweepGrid) -> Vec<SweepRecord> {
    par::indexed_map(grid.len(), |idx| run_point(grid, idx))
}

/// Always-sequential sweep with identical output, for comparison benches and
/// the no-thread build.
pub fn run_sweep_seq(grid: &SweepGrid) -> Vec<SweepRecord> {
    par::indexed_map_seq(grid.len(), |idx| run_point(grid, idx))
}

/// Writes the sweep as CSV: `c0,lambda,alpha,outcome,steps_to_exit,final_c`.
pub fn write_sweep_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "c0,lambda,alpha,outcome,steps_to_exit,final_c")?;
        for r in records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.c0,
                r.lambda,
                r.alpha,
                r.outcome.as_str(),
                r.steps_to_exit,
                r.final_c
            )?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
