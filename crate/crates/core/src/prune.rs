//! Channel selection and the function-preserving prune contraction.
//!
//! `prune(P)` removes the channels in `P` from both layers of an extended
//! submodule and folds their now-constant contribution into the next layer's
//! bias:
//!
//! `b_A' = b_A + A·D·b_W + Σ_{i∈P} A[:,i] · ψ_{−D̄,0}(b_W)_i`
//!
//! The contraction is total. It is lossless exactly when `DW = 0` and `P`
//! carries the support of `D`; that is verified, never assumed.

use ndarray::{Array1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::catalyst::{psi_scalar, CatalystDiag, ExtendedSubmodule};
use crate::error::{Error, Result};
use crate::nn::{filter_norms, Forward, PruneSet, Submodule};

/// Channels whose catalyst entry dominates the filter norm:
/// `P = { i : |D_ii| > ‖F_i‖₂ }`.
///
/// The inequality is strict; a channel exactly on the decision boundary is
/// kept, since the boundary is invariant under the regularizer's dynamics
/// and carries no evidence for pruning.
pub fn select_prune_indices(ext: &ExtendedSubmodule) -> PruneSet {
    let norms = filter_norms(ext.sub.w.view());
    let picked = ext
        .d
        .delta
        .iter()
        .zip(norms.iter())
        .enumerate()
        .filter(|(_, (&d, &n))| d.abs() > n)
        .map(|(i, _)| i);
    PruneSet::new(picked, ext.sub.hidden_dim()).expect("indices from enumerate are in range")
}

/// Removes the channels in `P`, folding their constant contribution into
/// `b_A`. The surviving channels keep the learnable-activation slots
/// `(−D̄[P^c], 0)`, so a second pass can eliminate `D̄` the same way.
///
/// Pruning every channel is permitted and leaves a constant-output block.
pub fn prune(ext: &ExtendedSubmodule, p: &PruneSet) -> Result<ExtendedSubmodule> {
    let n_w = ext.sub.hidden_dim();
    if let Some(&bad) = p.indices().iter().find(|&&i| i >= n_w) {
        return Err(Error::IndexOutOfRange { index: bad, len: n_w });
    }
    let keep = p.complement(n_w);

    // b_A' = b_A + A·D·b_W + Σ_{i∈P} A[:,i]·ψ_{−D̄,0}(b_W)_i
    let d_bw = &ext.d.delta * &ext.sub.b_w;
    let mut b_a = &ext.sub.b_a + &ext.sub.a.dot(&d_bw);
    for &i in p.indices() {
        let folded = psi_scalar(-ext.dbar.delta[i], 0.0, ext.sub.b_w[i], ext.sub.sigma);
        b_a.scaled_add(folded, &ext.sub.a.column(i));
    }

    let sub = Submodule::new(
        ext.sub.w.select(Axis(0), &keep),
        Array1::from_iter(keep.iter().map(|&i| ext.sub.b_w[i])),
        ext.sub.a.select(Axis(1), &keep),
        b_a,
        ext.sub.sigma,
    )?;
    let d = CatalystDiag::new(Array1::from_iter(
        keep.iter().map(|&i| -ext.dbar.delta[i]),
    ));
    let dbar = CatalystDiag::zeros(keep.len());
    ExtendedSubmodule::new(sub, d, dbar)
}

/// Maximum `‖before(x) − after(x)‖∞` over seeded standard-normal inputs.
/// Deterministic given the seed.
pub fn verify_function_preservation(
    before: &dyn Forward,
    after: &dyn Forward,
    n_samples: usize,
    input_dim: usize,
    seed: u64,
) -> Result<f64> {
    if before.input_dim() != input_dim || after.input_dim() != input_dim {
        return Err(Error::Shape(format!(
            "input dims {} / {} do not match requested {}",
            before.input_dim(),
            after.input_dim(),
            input_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_samples.max(1) {
        let x = Array1::from_shape_fn(input_dim, |_| StandardNormal.sample(&mut rng));
        let out_b = before.forward(x.view())?;
        let out_a = after.forward(x.view())?;
        if out_b.len() != out_a.len() {
            return Err(Error::Shape(format!(
                "output dims differ: {} vs {}",
                out_b.len(),
                out_a.len()
            )));
        }
        for (b, a) in out_b.iter().zip(out_a.iter()) {
            worst = worst.max((b - a).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_ext(rng: &mut ChaCha8Rng, n_w: usize, n_i: usize, n_a: usize) -> ExtendedSubmodule {
        let sub = Submodule::new(
            Array2::from_shape_fn((n_w, n_i), |_| rng.gen_range(-1.0..1.0)),
            Array1::from_shape_fn(n_w, |_| rng.gen_range(-1.0..1.0)),
            Array2::from_shape_fn((n_a, n_w), |_| rng.gen_range(-1.0..1.0)),
            Array1::from_shape_fn(n_a, |_| rng.gen_range(-1.0..1.0)),
            Activation::Relu,
        )
        .unwrap();
        let d = CatalystDiag::new(Array1::from_shape_fn(n_w, |_| rng.gen_range(-1.0..1.0)));
        let dbar = CatalystDiag::new(Array1::from_shape_fn(n_w, |_| rng.gen_range(-1.0..1.0)));
        ExtendedSubmodule::new(sub, d, dbar).unwrap()
    }

    /// Sets up the lossless-prune hypothesis: rows of `W` in `P` zeroed
    /// exactly and `D` supported exactly on `P`.
    fn satisfy_theorem_hypothesis(ext: &mut ExtendedSubmodule, p: &PruneSet) {
        for i in 0..ext.sub.hidden_dim() {
            if p.contains(i) {
                ext.sub.w.row_mut(i).fill(0.0);
            } else {
                ext.d.delta[i] = 0.0;
            }
        }
    }

    #[test]
    fn selection_examples() {
        let sub = Submodule::new(
            Array2::eye(2),
            Array1::zeros(2),
            Array2::eye(2),
            Array1::zeros(2),
            Activation::Relu,
        )
        .unwrap();
        // norms (1,1), D = diag(3, 0.1) → only channel 0 pruned.
        let ext = ExtendedSubmodule::new(
            sub.clone(),
            CatalystDiag::new(array![3.0, 0.1]),
            CatalystDiag::zeros(2),
        )
        .unwrap();
        assert_eq!(select_prune_indices(&ext).indices(), &[0]);

        let zero = ExtendedSubmodule::new(sub.clone(), CatalystDiag::zeros(2), CatalystDiag::zeros(2))
            .unwrap();
        assert!(select_prune_indices(&zero).is_empty());

        // Exact tie |D_ii| = ‖F_i‖₂ → kept.
        let tie = ExtendedSubmodule::new(
            sub,
            CatalystDiag::new(array![1.0, 1.0]),
            CatalystDiag::zeros(2),
        )
        .unwrap();
        assert!(select_prune_indices(&tie).is_empty());
    }

    /// Worked single-channel case: constant fold reproduces the original
    /// output exactly.
    #[test]
    fn hand_case_single_channel() {
        let sub = Submodule::new(
            array![[0.0]],
            array![-1.0],
            array![[2.0]],
            array![0.0],
            Activation::Relu,
        )
        .unwrap();
        let ext = ExtendedSubmodule::new(
            sub,
            CatalystDiag::new(array![1.0]),
            CatalystDiag::new(array![0.5]),
        )
        .unwrap();
        // Before: 2·ψ_{1,0.5}(−1) = 2·(0.5·(−1) + relu(−1)) = −1 for all x.
        let before = ext.forward(array![7.0].view()).unwrap();
        assert_abs_diff_eq!(before[0], -1.0, epsilon = 1e-15);

        let p = PruneSet::new([0], 1).unwrap();
        let pruned = prune(&ext, &p).unwrap();
        assert_eq!(pruned.sub.hidden_dim(), 0);
        for x in [-3.0, 0.0, 7.0] {
            let out = pruned.forward(array![x].view()).unwrap();
            assert_abs_diff_eq!(out[0], -1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn lossless_when_hypothesis_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for trial in 0..20 {
            let mut ext = random_ext(&mut rng, 6, 4, 3);
            let picked: Vec<usize> = (0..6).filter(|_| rng.gen_bool(0.4)).collect();
            let p = PruneSet::new(picked, 6).unwrap();
            satisfy_theorem_hypothesis(&mut ext, &p);
            let pruned = prune(&ext, &p).unwrap();
            let dev =
                verify_function_preservation(&ext, &pruned, 100, 4, 1000 + trial).unwrap();
            assert!(dev <= 1e-10, "deviation {dev}");
        }
    }

    #[test]
    fn empty_prune_with_zero_diag_only_touches_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let mut ext = random_ext(&mut rng, 4, 3, 2);
        ext.d = CatalystDiag::zeros(4);
        let pruned = prune(&ext, &PruneSet::empty()).unwrap();
        assert_eq!(pruned.sub.w, ext.sub.w);
        assert_eq!(pruned.sub.b_w, ext.sub.b_w);
        assert_eq!(pruned.sub.a, ext.sub.a);
        assert_eq!(pruned.sub.b_a, ext.sub.b_a);
        assert_eq!(pruned.d.delta, ext.dbar.delta.mapv(|v| -v));
        assert_eq!(pruned.dbar.delta, Array1::<f64>::zeros(4));
    }

    /// The slot convention (−D̄, 0) and the transposed form (0, D̄) define the
    /// same function, since ψ_{−d,0}(x) = ψ_{0,d}(x) = −d·x + σ(x).
    #[test]
    fn slot_conventions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let ext = random_ext(&mut rng, 5, 3, 2);
        let minus = ExtendedSubmodule::new(
            ext.sub.clone(),
            CatalystDiag::new(ext.dbar.delta.mapv(|v| -v)),
            CatalystDiag::zeros(5),
        )
        .unwrap();
        let plus = ExtendedSubmodule::new(
            ext.sub.clone(),
            CatalystDiag::zeros(5),
            ext.dbar.clone(),
        )
        .unwrap();
        let dev = verify_function_preservation(&minus, &plus, 50, 3, 99).unwrap();
        assert_eq!(dev, 0.0);
    }

    #[test]
    fn prune_rejects_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let ext = random_ext(&mut rng, 3, 2, 2);
        // Bypass PruneSet validation by building against a larger size.
        let p = PruneSet::new([5], 6).unwrap();
        assert!(matches!(
            prune(&ext, &p),
            Err(Error::IndexOutOfRange { index: 5, len: 3 })
        ));
    }

    #[test]
    fn identical_models_have_zero_deviation() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let ext = random_ext(&mut rng, 4, 3, 2);
        let dev = verify_function_preservation(&ext, &ext.clone(), 25, 3, 5).unwrap();
        assert_eq!(dev, 0.0);
    }

    #[test]
    fn deviation_scales_linearly_with_reg_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let mut base = random_ext(&mut rng, 6, 4, 3);
        let p = PruneSet::new([1, 4], 6).unwrap();
        satisfy_theorem_hypothesis(&mut base, &p);
        // Re-inject a unit-norm direction into the pruned rows and a unit
        // catalyst entry, then scale the rows so ‖DW‖₂,₁ = ε.
        let mut devs = Vec::new();
        let epsilons = [1e-2, 1e-3, 1e-4];
        for &eps in &epsilons {
            let mut ext = base.clone();
            for &i in p.indices() {
                for (j, v) in ext.sub.w.row_mut(i).iter_mut().enumerate() {
                    *v = ((i + 2) as f64 * (j + 1) as f64).sin();
                }
                let norm = ext.sub.w.row(i).dot(&ext.sub.w.row(i)).sqrt();
                let target = eps / p.len() as f64;
                ext.sub.w.row_mut(i).mapv_inplace(|v| v * target / norm);
                ext.d.delta[i] = 1.0;
            }
            assert_abs_diff_eq!(ext.reg_value(), eps, epsilon = 1e-12);
            let pruned = prune(&ext, &p).unwrap();
            devs.push(
                verify_function_preservation(&ext, &pruned, 100, 4, 7)
                    .unwrap()
                    .ln(),
            );
        }
        // Least-squares slope on (ln ε, ln dev).
        let xs: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
        let xm = xs.iter().sum::<f64>() / 3.0;
        let ym = devs.iter().sum::<f64>() / 3.0;
        let slope = xs
            .iter()
            .zip(&devs)
            .map(|(x, y)| (x - xm) * (y - ym))
            .sum::<f64>()
            / xs.iter().map(|x| (x - xm).powi(2)).sum::<f64>();
        assert!(
            (slope - 1.0).abs() <= 0.2,
            "log-log slope {slope} not within 1.0 ± 0.2"
        );
    }

    proptest! {
        /// Sizes contract by exactly |P|, and a follow-up empty prune touches
        /// only the prescribed slots: the bias picks up the A·D·b_W fold and
        /// the activation returns to plain σ.
        #[test]
        fn prune_size_and_idempotence(seed in 0u64..500, mask in 0u8..64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ext = random_ext(&mut rng, 6, 3, 2);
            let picked: Vec<usize> = (0..6).filter(|i| mask & (1 << i) != 0).collect();
            let p = PruneSet::new(picked.clone(), 6).unwrap();
            let once = prune(&ext, &p).unwrap();
            prop_assert_eq!(once.sub.hidden_dim(), 6 - picked.len());
            prop_assert_eq!(once.sub.a.ncols(), 6 - picked.len());
            prop_assert_eq!(once.sub.w.nrows(), 6 - picked.len());

            let again = prune(&once, &PruneSet::empty()).unwrap();
            prop_assert_eq!(&again.sub.w, &once.sub.w);
            prop_assert_eq!(&again.sub.b_w, &once.sub.b_w);
            prop_assert_eq!(&again.sub.a, &once.sub.a);
            let folded = &once.sub.b_a + &once.sub.a.dot(&(&once.d.delta * &once.sub.b_w));
            prop_assert_eq!(&again.sub.b_a, &folded);
            prop_assert_eq!(&again.d.delta, &Array1::<f64>::zeros(once.sub.hidden_dim()));
            prop_assert_eq!(&again.dbar.delta, &Array1::<f64>::zeros(once.sub.hidden_dim()));
        }

        /// An empty prune on a slot with D = 0 is the identity on every
        /// parameter.
        #[test]
        fn empty_prune_zero_diag_is_identity(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ext = random_ext(&mut rng, 5, 3, 2);
            ext.d = CatalystDiag::zeros(5);
            let out = prune(&ext, &PruneSet::empty()).unwrap();
            prop_assert_eq!(&out.sub.w, &ext.sub.w);
            prop_assert_eq!(&out.sub.b_a, &ext.sub.b_a);
        }
    }
}
