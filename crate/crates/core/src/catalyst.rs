//! The extended parameter space: catalyst diagonals, the learnable
//! activation `ψ_{D,D̄}`, the function-preserving `embed`, and the
//! `‖DW‖₂,₁` regularizer with its analytic gradient.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::{filter_norms, Activation, Forward, Submodule};

/// A diagonal matrix `D = diag(δ)` stored by its diagonal. One entry per
/// hidden channel of the owning submodule.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalystDiag {
    pub delta: Array1<f64>,
}

impl CatalystDiag {
    pub fn new(delta: Array1<f64>) -> Self {
        Self { delta }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            delta: Array1::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    /// `‖D‖₁ = Σ|D_ii|`.
    pub fn l1_norm(&self) -> f64 {
        self.delta.iter().map(|v| v.abs()).sum()
    }
}

/// A [`Submodule`] plus the two catalyst diagonals driving `ψ_{D,D̄}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSubmodule {
    pub sub: Submodule,
    pub d: CatalystDiag,
    pub dbar: CatalystDiag,
}

impl ExtendedSubmodule {
    pub fn new(sub: Submodule, d: CatalystDiag, dbar: CatalystDiag) -> Result<Self> {
        if d.len() != sub.hidden_dim() || dbar.len() != sub.hidden_dim() {
            return Err(Error::Shape(format!(
                "catalyst diagonals of length {}/{} do not match {} hidden channels",
                d.len(),
                dbar.len(),
                sub.hidden_dim()
            )));
        }
        Ok(Self { sub, d, dbar })
    }

    /// Evaluates `b_A + A·ψ_{D,D̄}(b_W + W·x)`.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.sub.input_dim() {
            return Err(Error::Shape(format!(
                "extended submodule expects input of length {}, got {}",
                self.sub.input_dim(),
                x.len()
            )));
        }
        let h = &self.sub.w.dot(&x) + &self.sub.b_w;
        let s = psi(&self.d, &self.dbar, h.view(), self.sub.sigma)?;
        Ok(&self.sub.a.dot(&s) + &self.sub.b_a)
    }

    /// Per-channel decision ratios `c_i = |D_ii| / ‖F_i‖₂`.
    ///
    /// A zero-norm filter with `D_ii ≠ 0` yields `+∞`; a channel where both
    /// vanish is degenerate and reports `1` (the boundary value).
    pub fn c_ratios(&self) -> Array1<f64> {
        let norms = filter_norms(self.sub.w.view());
        Array1::from_iter(self.d.delta.iter().zip(norms.iter()).map(|(&d, &n)| {
            if n == 0.0 {
                if d == 0.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            } else {
                d.abs() / n
            }
        }))
    }

    /// Channels where both the filter and its catalyst entry are exactly
    /// zero. These sit at the undefined ratio 0/0 and are worth logging.
    pub fn degenerate_channels(&self) -> Vec<usize> {
        let norms = filter_norms(self.sub.w.view());
        self.d
            .delta
            .iter()
            .zip(norms.iter())
            .enumerate()
            .filter(|(_, (&d, &n))| d == 0.0 && n == 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// `‖DW‖₂,₁` for this submodule's current parameters.
    pub fn reg_value(&self) -> f64 {
        catalyst_reg(&self.d, self.sub.w.view())
    }
}

impl Forward for ExtendedSubmodule {
    fn input_dim(&self) -> usize {
        self.sub.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.sub.output_dim()
    }
    fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        ExtendedSubmodule::forward(self, x)
    }
}

/// The learnable activation `ψ_{D,D̄}(x) = Dx − D̄x + σ(x)`, element-wise.
/// With `D = D̄` it reduces to `σ` exactly.
pub fn psi(
    d: &CatalystDiag,
    dbar: &CatalystDiag,
    x: ArrayView1<f64>,
    sigma: Activation,
) -> Result<Array1<f64>> {
    if d.len() != x.len() || dbar.len() != x.len() {
        return Err(Error::Shape(format!(
            "psi: diagonals of length {}/{} against input of length {}",
            d.len(),
            dbar.len(),
            x.len()
        )));
    }
    Ok(Array1::from_iter(
        d.delta
            .iter()
            .zip(dbar.delta.iter())
            .zip(x.iter())
            .map(|((&di, &dbi), &xi)| psi_scalar(di, dbi, xi, sigma)),
    ))
}

/// Single-channel `ψ`: `d·x − d̄·x + σ(x)`.
#[inline]
pub fn psi_scalar(d: f64, dbar: f64, x: f64, sigma: Activation) -> f64 {
    d * x - dbar * x + sigma.apply(x)
}

/// Extends a submodule with `D = D̄ = c·diag(‖F₁‖₂, …, ‖F_{N_W}‖₂)`.
///
/// The realized function is unchanged because `ψ_{D,D}` = σ, and every
/// channel starts on the decision boundary `c_i = c`. Channels with a
/// zero-norm filter get `D_ii = 0`; they are permitted and reported by
/// [`ExtendedSubmodule::degenerate_channels`].
pub fn embed(sub: Submodule, c: f64) -> Result<ExtendedSubmodule> {
    if c <= 0.0 {
        return Err(Error::Config(format!("embed scale c must be positive, got {c}")));
    }
    let delta = filter_norms(sub.w.view()).mapv(|n| c * n);
    let d = CatalystDiag::new(delta.clone());
    let dbar = CatalystDiag::new(delta);
    ExtendedSubmodule::new(sub, d, dbar)
}

/// The catalyst regularizer `‖DW‖₂,₁ = Σᵢ |D_ii|·‖F_i‖₂`.
pub fn catalyst_reg(d: &CatalystDiag, w: ArrayView2<f64>) -> f64 {
    debug_assert_eq!(d.len(), w.nrows());
    filter_norms(w)
        .iter()
        .zip(d.delta.iter())
        .map(|(&n, &di)| di.abs() * n)
        .sum()
}

/// Exact subgradient of [`catalyst_reg`]:
/// `∂/∂D_ii = sgn(D_ii)·‖F_i‖₂` and `∂/∂F_i = |D_ii|·F_i/‖F_i‖₂`,
/// with `sgn(0) = 0` and a zero row gradient for zero-norm filters so fixed
/// points stay fixed.
pub fn catalyst_reg_grad(d: &CatalystDiag, w: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    debug_assert_eq!(d.len(), w.nrows());
    let norms = filter_norms(w);
    let g_d = Array1::from_iter(
        d.delta
            .iter()
            .zip(norms.iter())
            .map(|(&di, &n)| sgn(di) * n),
    );
    let mut g_w = Array2::zeros(w.raw_dim());
    for ((i, row), mut g_row) in w.rows().into_iter().enumerate().zip(g_w.rows_mut()) {
        let n = norms[i];
        if n > 0.0 {
            let scale = d.delta[i].abs() / n;
            for (g, &v) in g_row.iter_mut().zip(row.iter()) {
                *g = scale * v;
            }
        }
    }
    (g_d, g_w)
}

#[inline]
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sub(rng: &mut ChaCha8Rng, n_w: usize, n_i: usize, n_a: usize) -> Submodule {
        Submodule::new(
            Array2::from_shape_fn((n_w, n_i), |_| rng.gen_range(-1.0..1.0)),
            Array1::from_shape_fn(n_w, |_| rng.gen_range(-1.0..1.0)),
            Array2::from_shape_fn((n_a, n_w), |_| rng.gen_range(-1.0..1.0)),
            Array1::from_shape_fn(n_a, |_| rng.gen_range(-1.0..1.0)),
            Activation::Relu,
        )
        .unwrap()
    }

    #[test]
    fn psi_scalar_examples() {
        // D=1, D̄=0, ReLU, x=−2 → 1·(−2) − 0 + 0 = −2
        assert_eq!(psi_scalar(1.0, 0.0, -2.0, Activation::Relu), -2.0);
        // D=0, D̄=1, ReLU, x=3 → −3 + 3 = 0
        assert_eq!(psi_scalar(0.0, 1.0, 3.0, Activation::Relu), 0.0);
    }

    #[test]
    fn psi_length_mismatch_is_error() {
        let d = CatalystDiag::zeros(2);
        let dbar = CatalystDiag::zeros(3);
        let x = array![1.0, 2.0];
        assert!(psi(&d, &dbar, x.view(), Activation::Relu).is_err());
    }

    proptest! {
        /// ψ with D = D̄ collapses to σ for every input and activation.
        #[test]
        fn psi_equal_diagonals_is_sigma(
            vals in proptest::collection::vec(-50.0f64..50.0, 1..8),
            diag in proptest::collection::vec(-10.0f64..10.0, 8),
            act_pick in 0usize..3,
        ) {
            let n = vals.len();
            let act = [Activation::Relu, Activation::Identity, Activation::Tanh][act_pick];
            let d = CatalystDiag::new(Array1::from_vec(diag[..n].to_vec()));
            let x = Array1::from_vec(vals.clone());
            let out = psi(&d, &d.clone(), x.view(), act).unwrap();
            for (o, v) in out.iter().zip(&vals) {
                prop_assert!((o - act.apply(*v)).abs() <= 1e-15);
            }
        }

        /// Absolute 1-homogeneity of the regularizer in D.
        #[test]
        fn reg_is_one_homogeneous(
            t in -5.0f64..5.0,
            entries in proptest::collection::vec(-2.0f64..2.0, 12),
            diag in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let w = Array2::from_shape_vec((3, 4), entries).unwrap();
            let d = CatalystDiag::new(Array1::from_vec(diag));
            let scaled = CatalystDiag::new(d.delta.mapv(|v| t * v));
            let lhs = catalyst_reg(&scaled, w.view());
            let rhs = t.abs() * catalyst_reg(&d, w.view());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }
    }

    #[test]
    fn embed_places_all_channels_on_boundary() {
        let w = array![[3.0, 4.0], [1.0, 0.0]]; // norms (5, 1)
        let sub = Submodule::new(
            w,
            Array1::zeros(2),
            Array2::eye(2),
            Array1::zeros(2),
            Activation::Relu,
        )
        .unwrap();
        let ext = embed(sub.clone(), 1.0).unwrap();
        assert_eq!(ext.d.delta, array![5.0, 1.0]);
        assert_eq!(ext.dbar.delta, array![5.0, 1.0]);
        assert_eq!(ext.c_ratios(), array![1.0, 1.0]);

        let ext2 = embed(sub, 2.0).unwrap();
        assert_eq!(ext2.c_ratios(), array![2.0, 2.0]);
    }

    #[test]
    fn embed_preserves_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sub = random_sub(&mut rng, 6, 4, 3);
        let ext = embed(sub.clone(), 1.0).unwrap();
        for _ in 0..100 {
            let x = Array1::from_shape_fn(4, |_| rng.gen_range(-3.0..3.0));
            let before = sub.forward(x.view()).unwrap();
            let after = ext.forward(x.view()).unwrap();
            for (b, a) in before.iter().zip(after.iter()) {
                assert!((b - a).abs() <= 1e-12);
            }
        }
    }

    /// Equal initial ratios even when filter norms span 3 orders of magnitude.
    #[test]
    fn embed_has_no_magnitude_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n_w = 16;
        let mut w = Array2::from_shape_fn((n_w, 8), |_| rng.gen_range(-1.0..1.0));
        for (i, mut row) in w.rows_mut().into_iter().enumerate() {
            let target = 10f64.powf(-3.0 + 6.0 * i as f64 / (n_w - 1) as f64);
            let norm: f64 = row.dot(&row); let norm = norm.sqrt();
            row.mapv_inplace(|v| v * target / norm);
        }
        let sub = Submodule::new(
            w,
            Array1::zeros(n_w),
            Array2::eye(n_w),
            Array1::zeros(n_w),
            Activation::Relu,
        )
        .unwrap();
        for c in [1.0, 2.5] {
            let ext = embed(sub.clone(), c).unwrap();
            let ratios = ext.c_ratios();
            let max = ratios.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let min = ratios.fold(f64::INFINITY, |m, &v| m.min(v));
            assert!(max - min <= 1e-12 * c, "spread {} at c={c}", max - min);
        }
    }

    #[test]
    fn embed_rejects_nonpositive_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sub = random_sub(&mut rng, 2, 2, 2);
        assert!(embed(sub, 0.0).is_err());
    }

    #[test]
    fn forward_extended_zero_diagonals_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let sub = random_sub(&mut rng, 5, 3, 2);
        let ext =
            ExtendedSubmodule::new(sub.clone(), CatalystDiag::zeros(5), CatalystDiag::zeros(5))
                .unwrap();
        for _ in 0..20 {
            let x = Array1::from_shape_fn(3, |_| rng.gen_range(-2.0..2.0));
            let a = sub.forward(x.view()).unwrap();
            let b = ext.forward(x.view()).unwrap();
            assert_abs_diff_eq!(a.as_slice().unwrap(), b.as_slice().unwrap(), epsilon = 1e-15);
        }
    }

    /// With D̄ = 0 and σ = identity the block collapses to
    /// `b_A + A(I + D)(b_W + Wx)`.
    #[test]
    fn forward_extended_identity_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut sub = random_sub(&mut rng, 4, 3, 2);
        sub.sigma = Activation::Identity;
        let d = CatalystDiag::new(Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0)));
        let ext = ExtendedSubmodule::new(sub.clone(), d.clone(), CatalystDiag::zeros(4)).unwrap();
        for _ in 0..20 {
            let x = Array1::from_shape_fn(3, |_| rng.gen_range(-2.0..2.0));
            let h = &sub.w.dot(&x) + &sub.b_w;
            let gained = &h + &(&d.delta * &h);
            let expected = &sub.a.dot(&gained) + &sub.b_a;
            let got = ext.forward(x.view()).unwrap();
            assert_abs_diff_eq!(
                got.as_slice().unwrap(),
                expected.as_slice().unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn forward_extended_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let sub = random_sub(&mut rng, 5, 4, 3);
        let d = CatalystDiag::new(Array1::from_shape_fn(5, |_| rng.gen_range(-1.0..1.0)));
        let dbar = CatalystDiag::new(Array1::from_shape_fn(5, |_| rng.gen_range(-1.0..1.0)));
        let ext = ExtendedSubmodule::new(sub, d, dbar).unwrap();
        for _ in 0..20 {
            let x = Array1::from_shape_fn(4, |_| rng.gen_range(-2.0..2.0));
            let fast = ext.forward(x.view()).unwrap();
            // Naive per-index evaluation.
            let mut slow = ext.sub.b_a.to_vec();
            for i in 0..5 {
                let mut h = ext.sub.b_w[i];
                for j in 0..4 {
                    h += ext.sub.w[[i, j]] * x[j];
                }
                let s = psi_scalar(ext.d.delta[i], ext.dbar.delta[i], h, ext.sub.sigma);
                for (k, out) in slow.iter_mut().enumerate() {
                    *out += ext.sub.a[[k, i]] * s;
                }
            }
            assert_abs_diff_eq!(fast.as_slice().unwrap(), slow.as_slice(), epsilon = 1e-12);
        }
    }

    #[test]
    fn reg_examples() {
        let w = array![[3.0, 4.0], [1.0, 0.0]];
        let d = CatalystDiag::new(array![2.0, 0.0]);
        assert_abs_diff_eq!(catalyst_reg(&d, w.view()), 10.0, epsilon = 1e-15);
        assert_eq!(catalyst_reg(&CatalystDiag::zeros(2), w.view()), 0.0);
        let eye = Array2::eye(2);
        let ones = CatalystDiag::new(array![1.0, 1.0]);
        assert_abs_diff_eq!(catalyst_reg(&ones, eye.view()), 2.0, epsilon = 1e-15);
    }

    /// Zero regularizer with a nonzero diagonal forces the matching rows to
    /// vanish. Checked constructively.
    #[test]
    fn zero_reg_with_nonzero_diag_implies_zero_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..50 {
            let mut w = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
            let mut delta = Array1::zeros(4);
            for i in 0..4 {
                if rng.gen_bool(0.5) {
                    delta[i] = rng.gen_range(0.5..2.0);
                    w.row_mut(i).fill(0.0);
                }
            }
            let d = CatalystDiag::new(delta.clone());
            if catalyst_reg(&d, w.view()) == 0.0 {
                let norms = filter_norms(w.view());
                for i in 0..4 {
                    if delta[i] != 0.0 {
                        assert!(norms[i] <= 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn reg_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..10 {
            // Keep entries away from the kinks at D_ii = 0 and F_i = 0.
            let w = Array2::from_shape_fn((4, 3), |_| {
                let v: f64 = rng.gen_range(0.2..1.5);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            });
            let d = CatalystDiag::new(Array1::from_shape_fn(4, |_| {
                let v: f64 = rng.gen_range(0.3..2.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            }));
            let (g_d, g_w) = catalyst_reg_grad(&d, w.view());
            let h = 1e-6;
            for i in 0..4 {
                let mut dp = d.clone();
                dp.delta[i] += h;
                let mut dm = d.clone();
                dm.delta[i] -= h;
                let fd =
                    (catalyst_reg(&dp, w.view()) - catalyst_reg(&dm, w.view())) / (2.0 * h);
                assert!(
                    (fd - g_d[i]).abs() / fd.abs().max(g_d[i].abs()) <= 1e-6,
                    "dD[{i}]: fd {fd} vs analytic {}",
                    g_d[i]
                );
            }
            for i in 0..4 {
                for j in 0..3 {
                    let mut wp = w.clone();
                    wp[[i, j]] += h;
                    let mut wm = w.clone();
                    wm[[i, j]] -= h;
                    let fd =
                        (catalyst_reg(&d, wp.view()) - catalyst_reg(&d, wm.view())) / (2.0 * h);
                    let an = g_w[[i, j]];
                    let denom = fd.abs().max(an.abs()).max(1e-9);
                    assert!(
                        (fd - an).abs() / denom <= 1e-5,
                        "dW[{i},{j}]: fd {fd} vs analytic {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn reg_grad_singular_conventions() {
        let w = array![[1.0, 2.0], [0.0, 0.0]];
        let d = CatalystDiag::new(array![0.0, 3.0]);
        let (g_d, g_w) = catalyst_reg_grad(&d, w.view());
        // D_ii = 0 → zero W-row gradient; F_i = 0 → zero D gradient.
        assert_eq!(g_w.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(g_d[1], 0.0);
        assert_eq!(g_w.row(1).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn c_ratio_sentinels() {
        let w = array![[1.0, 0.0], [0.0, 0.0]];
        let sub = Submodule::new(
            w,
            Array1::zeros(2),
            Array2::eye(2),
            Array1::zeros(2),
            Activation::Relu,
        )
        .unwrap();
        let ext = ExtendedSubmodule::new(
            sub,
            CatalystDiag::new(array![3.0, 2.0]),
            CatalystDiag::zeros(2),
        )
        .unwrap();
        let r = ext.c_ratios();
        assert_eq!(r[0], 3.0);
        assert!(r[1].is_infinite());

        let w2 = array![[1.0, 0.0], [0.0, 0.0]];
        let sub2 = Submodule::new(
            w2,
            Array1::zeros(2),
            Array2::eye(2),
            Array1::zeros(2),
            Activation::Relu,
        )
        .unwrap();
        let ext2 = ExtendedSubmodule::new(
            sub2,
            CatalystDiag::new(array![3.0, 0.0]),
            CatalystDiag::zeros(2),
        )
        .unwrap();
        assert_eq!(ext2.c_ratios()[1], 1.0);
        assert_eq!(ext2.degenerate_channels(), vec![1]);

        let w3 = array![[1.0, 0.0], [1.0, 1.0]];
        let sub3 = Submodule::new(
            w3,
            Array1::zeros(2),
            Array2::eye(2),
            Array1::zeros(2),
            Activation::Relu,
        )
        .unwrap();
        let ext3 = ExtendedSubmodule::new(
            sub3,
            CatalystDiag::new(array![3.0, 0.1 * 2f64.sqrt()]),
            CatalystDiag::zeros(2),
        )
        .unwrap();
        let r3 = ext3.c_ratios();
        assert_abs_diff_eq!(r3[0], 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r3[1], 0.1, epsilon = 1e-15);
    }
}
