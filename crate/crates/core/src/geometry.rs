//! The pruning-invariant set and its catalyst characterization.
//!
//! `X_tgt` is the union over channels of the subspaces where one filter
//! vanishes. Membership in its ε-neighborhood is equivalent to the existence
//! of a diagonal `D` with `‖DW‖₂,₁ < kε` and `‖D‖₁ > k`; the witness here is
//! the constructive half of that equivalence.

use ndarray::{Array1, ArrayView2};

use crate::catalyst::{catalyst_reg, CatalystDiag};
use crate::error::{Error, Result};
use crate::nn::filter_norms;

/// True iff some filter norm is at most `tol`.
pub fn in_xtgt(w: ArrayView2<f64>, tol: f64) -> bool {
    dist_to_xtgt(w) <= tol
}

/// L₂ distance from `w` to the nearest subspace of the pruning-invariant
/// set, which is simply the smallest filter norm.
pub fn dist_to_xtgt(w: ArrayView2<f64>) -> f64 {
    filter_norms(w)
        .iter()
        .fold(f64::INFINITY, |m, &n| m.min(n))
}

fn argmin_row(w: ArrayView2<f64>) -> usize {
    let norms = filter_norms(w);
    let mut best = 0;
    for (i, &n) in norms.iter().enumerate() {
        if n < norms[best] {
            best = i;
        }
    }
    best
}

/// Constructs a diagonal witness for `W ∈ B(X_tgt, ε)`: a single entry `k'`
/// on the minimum-norm row, with `k'` the midpoint of `(k, εk/‖F_ī‖₂)`
/// (`2k` for an exactly zero row). The result satisfies `‖DW‖₂,₁ < kε` and
/// `‖D‖₁ > k` strictly.
pub fn witness_d(w: ArrayView2<f64>, epsilon: f64, k: f64) -> Result<CatalystDiag> {
    if epsilon <= 0.0 || k <= 0.0 {
        return Err(Error::Config(format!(
            "witness requires epsilon > 0 and k > 0, got {epsilon}, {k}"
        )));
    }
    let dist = dist_to_xtgt(w);
    if !(dist < epsilon) {
        return Err(Error::NoWitness { dist, epsilon });
    }
    let row = argmin_row(w);
    let norm = filter_norms(w)[row];
    let k_prime = if norm == 0.0 {
        2.0 * k
    } else {
        (k + epsilon * k / norm) / 2.0
    };
    let mut delta = Array1::zeros(w.nrows());
    delta[row] = k_prime;
    Ok(CatalystDiag::new(delta))
}

/// Result of checking both directions of the neighborhood equivalence on one
/// instance. A direction is `None` when its hypothesis does not apply.
#[derive(Debug, Clone)]
pub struct EquivalenceCheck {
    /// Witness construction succeeded and satisfies both strict inequalities.
    pub direction_a: Option<bool>,
    /// The supplied diagonal's inequalities force a small filter norm.
    pub direction_b: Option<bool>,
    pub diagnostics: Vec<String>,
}

impl EquivalenceCheck {
    pub fn passed(&self) -> bool {
        self.direction_a.unwrap_or(true) && self.direction_b.unwrap_or(true)
    }
}

/// Verifies the equivalence `B(X_tgt, ε) = p({(W,D) : ‖DW‖₂,₁ < kε, ‖D‖₁ > k})`
/// on a single instance.
///
/// Direction (a): if `dist(W) < ε`, a witness must exist and satisfy both
/// inequalities. Direction (b): for the supplied `D` (or the witness itself
/// when none is given and one exists), the weighted-average chain
/// `min_i ‖F_i‖ ≤ ‖DW‖₂,₁/‖D‖₁ < ε` must hold.
pub fn check_thm1_equivalence(
    w: ArrayView2<f64>,
    epsilon: f64,
    k: f64,
    d: Option<&CatalystDiag>,
) -> EquivalenceCheck {
    let mut diagnostics = Vec::new();
    let dist = dist_to_xtgt(w);

    let direction_a = if dist < epsilon {
        match witness_d(w, epsilon, k) {
            Ok(witness) => {
                let reg = catalyst_reg(&witness, w);
                let l1 = witness.l1_norm();
                let ok = reg < k * epsilon && l1 > k;
                if !ok {
                    diagnostics.push(format!(
                        "witness violates inequalities: ‖DW‖₂,₁={reg} (need < {}), ‖D‖₁={l1} (need > {k})",
                        k * epsilon
                    ));
                }
                Some(ok)
            }
            Err(e) => {
                diagnostics.push(format!("witness construction failed: {e}"));
                Some(false)
            }
        }
    } else {
        diagnostics.push(format!(
            "direction (a) not applicable: dist {dist} ≥ epsilon {epsilon}"
        ));
        None
    };

    let candidate = match d {
        Some(d) => Some(d.clone()),
        None => witness_d(w, epsilon, k).ok(),
    };
    let direction_b = match candidate {
        Some(cand) => {
            let reg = catalyst_reg(&cand, w);
            let l1 = cand.l1_norm();
            if reg < k * epsilon && l1 > k {
                // Weighted-average argument: the minimum filter norm is
                // bounded by Σ (|D_ii|/‖D‖₁)·‖F_i‖₂ = ‖DW‖₂,₁/‖D‖₁ < ε.
                let weighted = reg / l1;
                let ok = dist <= weighted + 1e-15 && weighted < epsilon && dist < epsilon;
                if !ok {
                    diagnostics.push(format!(
                        "weighted-average chain broken: min norm {dist}, weighted {weighted}, epsilon {epsilon}"
                    ));
                }
                Some(ok)
            } else {
                diagnostics.push(format!(
                    "direction (b) not applicable: ‖DW‖₂,₁={reg}, ‖D‖₁={l1} do not satisfy the hypothesis"
                ));
                None
            }
        }
        None => {
            diagnostics.push("direction (b) not applicable: no candidate diagonal".into());
            None
        }
    };

    EquivalenceCheck {
        direction_a,
        direction_b,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn membership_examples() {
        let mut w = Array2::<f64>::eye(2);
        assert!(!in_xtgt(w.view(), 0.0));
        assert!(in_xtgt(w.view(), 1.0)); // boundary: min row norm = 1 ≤ 1
        w.row_mut(0).fill(0.0);
        assert!(in_xtgt(w.view(), 0.0));
    }

    #[test]
    fn distance_examples() {
        let mut w = array![[3.0, 0.0], [0.0, 1.0]];
        assert_abs_diff_eq!(dist_to_xtgt(w.view()), 1.0, epsilon = 1e-15);
        w.row_mut(1).fill(0.0);
        assert_eq!(dist_to_xtgt(w.view()), 0.0);
    }

    /// Distance equals the brute-force minimum over per-row zeroing: project
    /// onto each subspace by zeroing that row and take the Frobenius gap.
    #[test]
    fn distance_matches_bruteforce_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let w = Array2::from_shape_fn((5, 4), |_| rng.gen_range(-2.0..2.0));
            let mut best = f64::INFINITY;
            for i in 0..5 {
                let mut projected = w.clone();
                projected.row_mut(i).fill(0.0);
                let gap = (&w - &projected).mapv(|v: f64| v * v).sum().sqrt();
                best = best.min(gap);
            }
            assert_abs_diff_eq!(dist_to_xtgt(w.view()), best, epsilon = 1e-12);
        }
    }

    #[test]
    fn dist_zero_iff_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let mut w = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
            assert_eq!(dist_to_xtgt(w.view()) == 0.0, in_xtgt(w.view(), 0.0));
            w.row_mut(2).fill(0.0);
            assert!(in_xtgt(w.view(), 0.0));
            assert_eq!(dist_to_xtgt(w.view()), 0.0);
        }
    }

    #[test]
    fn witness_midpoint_example() {
        // min row norm 0.5, ε = 1, k = 1 → k' midpoint of (1, 2) = 1.5
        let w = array![[0.5, 0.0], [3.0, 4.0]];
        let d = witness_d(w.view(), 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(d.delta[0], 1.5, epsilon = 1e-15);
        assert_eq!(d.delta[1], 0.0);
        assert_abs_diff_eq!(catalyst_reg(&d, w.view()), 0.75, epsilon = 1e-15);
        assert!(catalyst_reg(&d, w.view()) < 1.0);
        assert!(d.l1_norm() > 1.0);
    }

    #[test]
    fn witness_zero_row_and_precondition() {
        let w = array![[0.0, 0.0], [3.0, 4.0]];
        let d = witness_d(w.view(), 0.5, 1.0).unwrap();
        assert_eq!(d.delta[0], 2.0);
        assert_eq!(catalyst_reg(&d, w.view()), 0.0);

        // W = I₂ with ε = 0.5: dist = 1 ≥ ε → no witness.
        let eye = Array2::<f64>::eye(2);
        assert!(matches!(
            witness_d(eye.view(), 0.5, 1.0),
            Err(Error::NoWitness { .. })
        ));
    }

    #[test]
    fn witness_ties_break_low_index() {
        let w = array![[1.0, 0.0], [0.0, 1.0]];
        let d = witness_d(w.view(), 2.0, 1.0).unwrap();
        assert!(d.delta[0] != 0.0 && d.delta[1] == 0.0);
    }

    #[test]
    fn equivalence_both_directions_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let epsilon = 0.3;
        let k = 1.7;
        for _ in 0..100 {
            // Sample inside the neighborhood: shrink one row below ε.
            let mut w = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
            let target: f64 = rng.gen_range(0.0..epsilon * 0.99);
            let row = rng.gen_range(0..4);
            let norm: f64 = w.row(row).dot(&w.row(row)); let norm = norm.sqrt();
            w.index_axis_mut(Axis(0), row)
                .mapv_inplace(|v| v * target / norm);
            let check = check_thm1_equivalence(w.view(), epsilon, k, None);
            assert_eq!(check.direction_a, Some(true), "{:?}", check.diagnostics);
            assert_eq!(check.direction_b, Some(true), "{:?}", check.diagnostics);
            assert!(check.passed());
        }
    }

    #[test]
    fn equivalence_boundary_is_vacuous() {
        // min row norm exactly ε: not in the open neighborhood.
        let w = array![[1.0, 0.0], [0.0, 2.0]];
        let check = check_thm1_equivalence(w.view(), 1.0, 1.0, None);
        assert_eq!(check.direction_a, None);
        assert_eq!(check.direction_b, None);
        assert!(check.passed());
    }

    #[test]
    fn equivalence_rejects_bad_diag() {
        // D satisfying the inequalities against a W far from the set cannot
        // exist; a D that does NOT satisfy them leaves direction (b) vacuous.
        let w = Array2::<f64>::eye(3);
        let d = CatalystDiag::new(array![5.0, 0.0, 0.0]);
        let check = check_thm1_equivalence(w.view(), 0.5, 1.0, Some(&d));
        assert_eq!(check.direction_a, None);
        assert_eq!(check.direction_b, None);
    }
}
