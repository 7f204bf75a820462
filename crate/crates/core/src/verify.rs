//! Sampling-based invariant suite behind the `verify` CLI command.
//!
//! Each check draws randomized instances, exercises one of the crate's
//! structural guarantees, and reports the worst error observed. Instance
//! sampling is keyed by index, so the parallel and sequential paths return
//! identical results; `*_seq` variants exist for benchmarking the
//! difference.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalyst::{catalyst_reg, catalyst_reg_grad, embed, CatalystDiag, ExtendedSubmodule};
use crate::dynamics::{
    f_coeff, gd_step, recurrence_step, safety_bound, check_lemma_f, validity_window,
    DynamicsState, LambdaSchedule, LemmaGridSpec,
};
use crate::error::Result;
use crate::geometry::{check_thm1_equivalence, dist_to_xtgt, witness_d};
use crate::nn::{filter_norms, Activation, DenseLayer, Model, Submodule, SubmoduleSlot};
use crate::par;
use crate::prune::{prune, select_prune_indices, verify_function_preservation};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_owned(),
            passed,
            detail,
        }
    }
}

/// Central finite differences of a scalar function.
pub fn finite_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom <= 1e-8 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_submodule(
    rng: &mut ChaCha8Rng,
    n_w: usize,
    n_i: usize,
    n_a: usize,
    sigma: Activation,
) -> Submodule {
    Submodule::new(
        Array2::from_shape_fn((n_w, n_i), |_| rng.gen_range(-1.0f64..1.0)),
        Array1::from_shape_fn(n_w, |_| rng.gen_range(-0.8..0.8)),
        Array2::from_shape_fn((n_a, n_w), |_| rng.gen_range(-1.0f64..1.0)),
        Array1::from_shape_fn(n_a, |_| rng.gen_range(-0.8..0.8)),
        sigma,
    )
    .expect("consistent shapes by construction")
}

// ---------------------------------------------------------------------------
// Gradient checks
// ---------------------------------------------------------------------------

/// Worst relative error of full-model backprop against central finite
/// differences (`h = 1e-5`) over randomized models.
pub fn gradient_check_models(instances: usize, seed: u64) -> f64 {
    let errs = par::indexed_map(instances, |idx| gradient_check_one(seed, idx as u64));
    errs.into_iter().fold(0.0, f64::max)
}

/// Sequential twin of [`gradient_check_models`].
pub fn gradient_check_models_seq(instances: usize, seed: u64) -> f64 {
    let errs = par::indexed_map_seq(instances, |idx| gradient_check_one(seed, idx as u64));
    errs.into_iter().fold(0.0, f64::max)
}

fn gradient_check_one(seed: u64, idx: u64) -> f64 {
    let mut rng = stream_rng(seed, 10_000 + idx);
    let relu = idx % 2 == 0;
    let sigma = if relu { Activation::Relu } else { Activation::Tanh };
    let n_i = rng.gen_range(2..5);
    let n_w = rng.gen_range(3..7);
    let n_a = rng.gen_range(2..4);
    let classes = rng.gen_range(2..4);

    let sub = random_submodule(&mut rng, n_w, n_i, n_a, sigma);
    let slot = if rng.gen_bool(0.5) {
        let mut ext = embed(sub, 1.0).expect("positive scale");
        ext.d = CatalystDiag::new(Array1::from_shape_fn(n_w, |_| rng.gen_range(-0.9..0.9)));
        ext.dbar = CatalystDiag::new(Array1::from_shape_fn(n_w, |_| rng.gen_range(-0.9..0.9)));
        SubmoduleSlot::Extended(ext)
    } else {
        SubmoduleSlot::Plain(sub)
    };
    let post = vec![DenseLayer::new(
        Array2::from_shape_fn((classes, n_a), |_| rng.gen_range(-0.8..0.8)),
        Array1::from_shape_fn(classes, |_| rng.gen_range(-0.3..0.3)),
        Activation::Identity,
    )
    .expect("consistent shapes")];
    let model = Model {
        pre: vec![],
        slot,
        junction: if relu { Activation::Identity } else { Activation::Tanh },
        post,
    };

    // Jitter the batch until every submodule pre-activation clears the ReLU
    // kink by a wide margin relative to the FD step.
    let batch = 5;
    let (x, labels) = loop {
        let x = Array2::from_shape_fn((batch, n_i), |_| rng.gen_range(-1.5..1.5));
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
        if !relu {
            break (x, labels);
        }
        let sub = model.slot.submodule();
        let h = x.dot(&sub.w.t()) + &sub.b_w;
        if h.iter().all(|v| v.abs() > 1e-3) {
            break (x, labels);
        }
    };

    let (_, grads) = model
        .loss_and_grads(x.view(), &labels)
        .expect("finite loss on bounded weights");
    let analytic = grads.to_vec();
    let base = model.param_vec();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut m = model.clone();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        m.set_param_vec(&plus);
        let lp = m.loss(x.view(), &labels).expect("finite");
        let mut minus = base.clone();
        minus[i] -= h;
        m.set_param_vec(&minus);
        let lm = m.loss(x.view(), &labels).expect("finite");
        worst = worst.max(rel_err(analytic[i], (lp - lm) / (2.0 * h)));
    }
    worst
}

/// Worst relative error of the analytic regularizer gradient against finite
/// differences, sampled away from its subgradient kinks.
pub fn gradient_check_reg(instances: usize, seed: u64) -> f64 {
    let errs = par::indexed_map(instances, |idx| {
        let mut rng = stream_rng(seed, 20_000 + idx as u64);
        let n_w = rng.gen_range(2..8);
        let n_i = rng.gen_range(2..6);
        let signed = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
            let v = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        };
        let w = Array2::from_shape_fn((n_w, n_i), |_| signed(&mut rng, 0.2, 1.5));
        let d = CatalystDiag::new(Array1::from_shape_fn(n_w, |_| signed(&mut rng, 0.3, 2.0)));
        let (g_d, g_w) = catalyst_reg_grad(&d, w.view());

        let flat: Vec<f64> = d.delta.iter().chain(w.iter()).copied().collect();
        let reg_fn = |v: &[f64]| {
            let dd = CatalystDiag::new(Array1::from_vec(v[..n_w].to_vec()));
            let ww = Array2::from_shape_vec((n_w, n_i), v[n_w..].to_vec()).expect("shape");
            catalyst_reg(&dd, ww.view())
        };
        let fd = finite_diff(reg_fn, &flat, 1e-6);
        let mut worst = 0.0f64;
        for (i, &g) in g_d.iter().enumerate() {
            worst = worst.max(rel_err(g, fd[i]));
        }
        for (i, &g) in g_w.iter().enumerate() {
            worst = worst.max(rel_err(g, fd[n_w + i]));
        }
        worst
    });
    errs.into_iter().fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Neighborhood equivalence sampling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Thm1Stats {
    pub direction_a_pass: usize,
    pub direction_a_fail: usize,
    pub direction_b_pass: usize,
    pub direction_b_fail: usize,
    pub exact_pass: usize,
    pub exact_fail: usize,
}

impl Thm1Stats {
    pub fn all_passed(&self) -> bool {
        self.direction_a_fail == 0 && self.direction_b_fail == 0 && self.exact_fail == 0
    }
}

/// Samples both directions of the ε-neighborhood equivalence plus the exact
/// zero-row characterization.
pub fn thm1_sampling(per_direction: usize, seed: u64) -> Thm1Stats {
    #[derive(Default)]
    struct Counts {
        a_pass: usize,
        a_fail: usize,
        b_pass: usize,
        b_fail: usize,
        e_pass: usize,
        e_fail: usize,
    }
    let counts = par::indexed_map(per_direction, |idx| {
        let mut rng = stream_rng(seed, 30_000 + idx as u64);
        let mut c = Counts::default();
        let n_w = rng.gen_range(2..8);
        let n_i = rng.gen_range(2..6);
        let epsilon = rng.gen_range(0.05..1.0);
        let k = rng.gen_range(0.5..3.0);

        // Direction (a): W strictly inside the neighborhood.
        let mut w = Array2::from_shape_fn((n_w, n_i), |_| rng.gen_range(-1.0f64..1.0));
        for mut row in w.rows_mut() {
            // Keep every row comfortably above ε so the scaled row is the
            // unique argmin.
            let norm = row.dot(&row).sqrt().max(1e-9);
            let target = rng.gen_range(1.5 * epsilon..3.0 * epsilon + 1.0);
            row.mapv_inplace(|v| v * target / norm);
        }
        let small_row = rng.gen_range(0..n_w);
        let target = rng.gen_range(0.0..0.99 * epsilon);
        let norm = {
            let r = w.row(small_row);
            r.dot(&r).sqrt().max(1e-12)
        };
        w.index_axis_mut(Axis(0), small_row)
            .mapv_inplace(|v| v * target / norm);
        let check = check_thm1_equivalence(w.view(), epsilon, k, None);
        if check.direction_a == Some(true) {
            c.a_pass += 1;
        } else {
            c.a_fail += 1;
        }

        // Direction (b): an independent diagonal satisfying the sublevel
        // inequalities, with extra mass spread over other rows.
        let mut d = witness_d(w.view(), epsilon, k).expect("dist < epsilon by construction");
        let budget = k * epsilon - catalyst_reg(&d, w.view());
        let norms = filter_norms(w.view());
        let spread_rows = rng.gen_range(0..n_w);
        for _ in 0..spread_rows {
            let row = rng.gen_range(0..n_w);
            if row != small_row && norms[row] > 0.0 {
                let extra = rng.gen_range(0.0..0.4) * budget / (spread_rows.max(1) as f64);
                d.delta[row] += extra / norms[row];
            }
        }
        if catalyst_reg(&d, w.view()) < k * epsilon && d.l1_norm() > k {
            let check = check_thm1_equivalence(w.view(), epsilon, k, Some(&d));
            if check.direction_b == Some(true) {
                c.b_pass += 1;
            } else {
                c.b_fail += 1;
            }
        } else {
            // Spreading overflowed the budget; the witness alone qualifies.
            let check = check_thm1_equivalence(w.view(), epsilon, k, None);
            if check.direction_b == Some(true) {
                c.b_pass += 1;
            } else {
                c.b_fail += 1;
            }
        }

        // Exact characterization: a zero row admits DW = 0 with D ≠ 0, and
        // conversely every nonzero entry of D pins a zero row.
        let mut wz = Array2::from_shape_fn((n_w, n_i), |_| rng.gen_range(-1.0f64..1.0));
        let support: Vec<usize> = (0..n_w).filter(|_| rng.gen_bool(0.4)).collect();
        let mut dz = Array1::zeros(n_w);
        for &i in &support {
            wz.row_mut(i).fill(0.0);
            dz[i] = rng.gen_range(0.5..2.0);
        }
        if support.is_empty() {
            wz.row_mut(0).fill(0.0);
            dz[0] = 1.0;
        }
        let dz = CatalystDiag::new(dz);
        let reg = catalyst_reg(&dz, wz.view());
        let norms = filter_norms(wz.view());
        let rows_zero = dz
            .delta
            .iter()
            .zip(norms.iter())
            .all(|(&di, &ni)| di == 0.0 || ni <= 1e-15);
        if reg == 0.0 && dz.l1_norm() > 0.0 && rows_zero && dist_to_xtgt(wz.view()) == 0.0 {
            c.e_pass += 1;
        } else {
            c.e_fail += 1;
        }
        c
    });

    let mut stats = Thm1Stats::default();
    for c in counts {
        stats.direction_a_pass += c.a_pass;
        stats.direction_a_fail += c.a_fail;
        stats.direction_b_pass += c.b_pass;
        stats.direction_b_fail += c.b_fail;
        stats.exact_pass += c.e_pass;
        stats.exact_fail += c.e_fail;
    }
    stats
}

// ---------------------------------------------------------------------------
// Lossless-prune sampling
// ---------------------------------------------------------------------------

/// Worst forward deviation across a prune on models satisfying the lossless
/// hypothesis exactly (`DW = 0`, `P = supp(D)`).
pub fn thm2_exactness(n_models: usize, n_inputs: usize, seed: u64) -> f64 {
    let devs = par::indexed_map(n_models, |idx| thm2_one(seed, idx as u64, n_inputs));
    devs.into_iter().fold(0.0, f64::max)
}

/// Sequential twin of [`thm2_exactness`].
pub fn thm2_exactness_seq(n_models: usize, n_inputs: usize, seed: u64) -> f64 {
    let devs = par::indexed_map_seq(n_models, |idx| thm2_one(seed, idx as u64, n_inputs));
    devs.into_iter().fold(0.0, f64::max)
}

fn thm2_one(seed: u64, idx: u64, n_inputs: usize) -> f64 {
    let mut rng = stream_rng(seed, 40_000 + idx);
    let n_w = rng.gen_range(3..10);
    let n_i = rng.gen_range(2..6);
    let n_a = rng.gen_range(2..5);
    let sigma = [Activation::Relu, Activation::Tanh, Activation::Identity]
        [rng.gen_range(0..3)];
    let sub = random_submodule(&mut rng, n_w, n_i, n_a, sigma);
    let mut ext = ExtendedSubmodule::new(
        sub,
        CatalystDiag::zeros(n_w),
        CatalystDiag::new(Array1::from_shape_fn(n_w, |_| rng.gen_range(-1.0f64..1.0))),
    )
    .expect("lengths match");
    let mut picked: Vec<usize> = (0..n_w).filter(|_| rng.gen_bool(0.5)).collect();
    if picked.is_empty() {
        picked.push(rng.gen_range(0..n_w));
    }
    for &i in &picked {
        ext.sub.w.row_mut(i).fill(0.0);
        let v = rng.gen_range(0.5..2.0);
        ext.d.delta[i] = if rng.gen_bool(0.5) { v } else { -v };
    }
    let p = select_prune_indices(&ext);
    debug_assert_eq!(p.indices(), picked.as_slice());
    let contracted = prune(&ext, &p).expect("indices in range");
    verify_function_preservation(&ext, &contracted, n_inputs, n_i, seed ^ idx)
        .expect("matching dims")
}

/// Deviation-vs-ε log-log slope for near-lossless prunes, with the
/// deviations at each ε.
pub fn thm2_epsilon_sweep(seed: u64) -> (f64, Vec<(f64, f64)>) {
    let mut rng = stream_rng(seed, 41_000);
    let n_w = 8;
    let n_i = 5;
    let sub = random_submodule(&mut rng, n_w, n_i, 4, Activation::Relu);
    let mut base = ExtendedSubmodule::new(
        sub,
        CatalystDiag::zeros(n_w),
        CatalystDiag::new(Array1::from_shape_fn(n_w, |_| rng.gen_range(-1.0f64..1.0))),
    )
    .expect("lengths match");
    let picked = vec![1usize, 4, 6];
    for &i in &picked {
        base.sub.w.row_mut(i).fill(0.0);
        base.d.delta[i] = rng.gen_range(0.5..1.5);
    }
    let direction: Vec<Array1<f64>> = picked
        .iter()
        .map(|_| {
            let v = Array1::from_shape_fn(n_i, |_| rng.gen_range(-1.0f64..1.0));
            let n = v.dot(&v).sqrt();
            v.mapv(|x| x / n)
        })
        .collect();

    let epsilons = [1e-2, 1e-3, 1e-4];
    let mut pairs = Vec::new();
    for &eps in &epsilons {
        let mut ext = base.clone();
        for (slot, &i) in picked.iter().enumerate() {
            let norm_target = eps / (picked.len() as f64 * ext.d.delta[i].abs());
            ext.sub
                .w
                .row_mut(i)
                .assign(&direction[slot].mapv(|v| v * norm_target));
        }
        let p = crate::nn::PruneSet::new(picked.clone(), n_w).expect("valid indices");
        let contracted = prune(&ext, &p).expect("in range");
        let dev = verify_function_preservation(&ext, &contracted, 100, n_i, seed ^ 77)
            .expect("matching dims");
        pairs.push((eps, dev));
    }
    let xs: Vec<f64> = pairs.iter().map(|(e, _)| e.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, d)| d.ln()).collect();
    let xm = xs.iter().sum::<f64>() / xs.len() as f64;
    let ym = ys.iter().sum::<f64>() / ys.len() as f64;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xm) * (y - ym))
        .sum::<f64>()
        / xs.iter().map(|x| (x - xm).powi(2)).sum::<f64>();
    (slope, pairs)
}

// ---------------------------------------------------------------------------
// Ratio-dynamics sampling
// ---------------------------------------------------------------------------

/// Worst drift `|c_t − 1|` over boundary trajectories for each `(α, λ)`
/// combination.
pub fn thm3_boundary(steps: u64, seed: u64) -> f64 {
    let combos = [(0.0, 1e-3), (0.0, 1e-2), (1e-4, 1e-3), (1e-4, 1e-2)];
    let mut worst = 0.0f64;
    for (idx, &(alpha, lambda)) in combos.iter().enumerate() {
        let mut rng = stream_rng(seed, 50_000 + idx as u64);
        let n = rng.gen_range(1..=64);
        let mut m = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0f64..1.0));
        let norm = m.dot(&m).sqrt();
        m.mapv_inplace(|v| v / norm);
        let mut state = DynamicsState::new(1.0, m, alpha, LambdaSchedule::Constant(lambda))
            .expect("valid alpha and lambda");
        // d = c₀·‖M‖ with ‖M‖ normalized to 1.
        for _ in 0..steps {
            let report = gd_step(&mut state);
            if report.terminal {
                break;
            }
            worst = worst.max((state.c() - 1.0).abs());
        }
    }
    worst
}

/// Aggregate statistics over randomized bifurcation trajectories.
#[derive(Debug, Clone, Default)]
pub struct BifurcationStats {
    pub trajectories: usize,
    pub preserve: usize,
    pub prune: usize,
    pub sign_flips: usize,
    pub undecided: usize,
    pub misclassified: usize,
    /// Worst violation of the per-step ratio bound `f(c₀, λ_*)` (positive
    /// means the bound was exceeded).
    pub max_ratio_excess: f64,
    /// Worst relative gap between the simulated ratio and the composed
    /// closed-form recurrence, measured inside the validity window.
    pub max_recurrence_rel_err: f64,
    pub max_steps_used: u64,
}

impl BifurcationStats {
    fn merge(&mut self, other: &BifurcationStats) {
        self.trajectories += other.trajectories;
        self.preserve += other.preserve;
        self.prune += other.prune;
        self.sign_flips += other.sign_flips;
        self.undecided += other.undecided;
        self.misclassified += other.misclassified;
        self.max_ratio_excess = self.max_ratio_excess.max(other.max_ratio_excess);
        self.max_recurrence_rel_err = self
            .max_recurrence_rel_err
            .max(other.max_recurrence_rel_err);
        self.max_steps_used = self.max_steps_used.max(other.max_steps_used);
    }
}

/// Runs randomized trajectories under the safety bound, checking the
/// classification, the per-step ratio bound, and the equivalence between
/// the raw simulation and the composed recurrence.
pub fn thm3_bifurcation(n_traj: usize, seed: u64) -> BifurcationStats {
    let per = par::indexed_map(n_traj, |idx| bifurcation_one(seed, idx as u64));
    let mut stats = BifurcationStats::default();
    for s in &per {
        stats.merge(s);
    }
    stats
}

/// Sequential twin of [`thm3_bifurcation`].
pub fn thm3_bifurcation_seq(n_traj: usize, seed: u64) -> BifurcationStats {
    let per = par::indexed_map_seq(n_traj, |idx| bifurcation_one(seed, idx as u64));
    let mut stats = BifurcationStats::default();
    for s in &per {
        stats.merge(s);
    }
    stats
}

fn bifurcation_one(seed: u64, idx: u64) -> BifurcationStats {
    let mut rng = stream_rng(seed, 60_000 + idx);
    let alpha = if rng.gen_bool(0.5) { 0.0 } else { 1e-4 };
    let c0 = loop {
        let v = 10f64.powf(rng.gen_range(-1.0f64..1.0));
        if v != 1.0 {
            break v;
        }
    };
    let n: usize = rng.gen_range(1..=64);
    let bound = safety_bound(c0, alpha);
    let lambda = 10f64.powf(rng.gen_range(1e-3f64.log10()..=bound.log10()));

    let mut m = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0f64..1.0));
    let norm = m.dot(&m).sqrt().max(1e-9);
    m.mapv_inplace(|v| v / norm);
    let d0 = if rng.gen_bool(0.5) { c0 } else { -c0 };
    let mut state = DynamicsState::new(d0, m, alpha, LambdaSchedule::Constant(lambda))
        .expect("valid alpha and lambda");

    let mut stats = BifurcationStats {
        trajectories: 1,
        ..Default::default()
    };
    let k_bound = f_coeff(c0, lambda, alpha).expect("inside window under safety bound");
    let (lo, hi) = validity_window(lambda, alpha);
    let mut c_rec = c0;
    let mut rec_valid = true;
    let max_steps = 200_000u64;

    loop {
        let c_prev = state.c();
        if c_prev <= lo {
            stats.preserve += 1;
            if c0 >= 1.0 {
                stats.misclassified += 1;
            }
            break;
        }
        if c_prev >= hi {
            stats.prune += 1;
            if c0 <= 1.0 {
                stats.misclassified += 1;
            }
            break;
        }
        if state.t >= max_steps {
            stats.undecided += 1;
            break;
        }
        let report = gd_step(&mut state);
        if report.terminal {
            // d or M hit exact zero; the next head classifies it.
            continue;
        }
        if report.sign_flip {
            stats.sign_flips += 1;
            break;
        }
        let c_new = state.c();
        let in_window = c_new > lo && c_new < hi;
        if in_window {
            // Ratio bound against f(c₀, λ_*): contraction below 1, growth
            // above.
            let ratio = c_new / c_prev;
            let excess = if c0 < 1.0 { ratio - k_bound } else { k_bound - ratio };
            stats.max_ratio_excess = stats.max_ratio_excess.max(excess);
        }
        if rec_valid {
            match recurrence_step(c_rec, lambda, alpha) {
                Ok(next) => {
                    c_rec = next;
                    if in_window {
                        stats.max_recurrence_rel_err = stats
                            .max_recurrence_rel_err
                            .max((c_new - c_rec).abs() / c_rec.abs().max(1e-300));
                    }
                }
                Err(_) => rec_valid = false,
            }
        }
    }
    stats.max_steps_used = state.t;
    stats
}

// ---------------------------------------------------------------------------
// Embed bias
// ---------------------------------------------------------------------------

/// Checks the zero-magnitude-bias initialization: ratios after embed are
/// equal across three orders of filter-norm spread, and a pure-regularizer
/// descent from the boundary stays on it. Returns (max ratio spread,
/// max |c − 1| over the descent).
pub fn embed_bias(steps: usize, seed: u64) -> (f64, f64) {
    let mut rng = stream_rng(seed, 70_000);
    let n_w = 24;
    let n_i = 6;
    let mut w = Array2::from_shape_fn((n_w, n_i), |_| rng.gen_range(-1.0f64..1.0));
    for (i, mut row) in w.rows_mut().into_iter().enumerate() {
        let scale = 10f64.powf(-1.5 + 3.0 * i as f64 / (n_w - 1) as f64);
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v * scale / norm);
    }
    let sub = Submodule::new(
        w,
        Array1::zeros(n_w),
        Array2::eye(n_w),
        Array1::zeros(n_w),
        Activation::Relu,
    )
    .expect("consistent shapes");
    let mut ext = embed(sub, 1.0).expect("positive scale");

    let ratios = ext.c_ratios();
    let spread = ratios.fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        - ratios.fold(f64::INFINITY, |m, &v| m.min(v));

    // Plain descent on γ·‖DW‖₂,₁ alone, no decay: all ratios stay pinned.
    let effective_lambda = 0.002;
    let mut worst_drift = 0.0f64;
    for _ in 0..steps {
        let (g_d, g_w) = catalyst_reg_grad(&ext.d, ext.sub.w.view());
        ext.d.delta.scaled_add(-effective_lambda, &g_d);
        ext.sub.w.scaled_add(-effective_lambda, &g_w);
        for &c in ext.c_ratios().iter() {
            worst_drift = worst_drift.max((c - 1.0).abs());
        }
    }
    (spread, worst_drift)
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

/// Runs every check at the stated scale. `quick` divides the sampling
/// budgets by 10 for smoke testing.
pub fn run_suite(seed: u64, quick: bool) -> Vec<CheckResult> {
    let div = if quick { 10 } else { 1 };
    let mut results = Vec::new();

    let worst = gradient_check_models((50 / div).max(2), seed);
    results.push(CheckResult::new(
        "gradient-check-model",
        worst <= 1e-5,
        format!("max relative error {worst:.3e} (tolerance 1e-5)"),
    ));

    let worst = gradient_check_reg((50 / div).max(2), seed);
    results.push(CheckResult::new(
        "gradient-check-regularizer",
        worst <= 1e-6,
        format!("max relative error {worst:.3e} (tolerance 1e-6)"),
    ));

    let stats = thm1_sampling((500 / div).max(5), seed);
    results.push(CheckResult::new(
        "neighborhood-equivalence-sampling",
        stats.all_passed(),
        format!(
            "direction a {}/{}, direction b {}/{}, exact {}/{}",
            stats.direction_a_pass,
            stats.direction_a_pass + stats.direction_a_fail,
            stats.direction_b_pass,
            stats.direction_b_pass + stats.direction_b_fail,
            stats.exact_pass,
            stats.exact_pass + stats.exact_fail
        ),
    ));

    let dev = thm2_exactness((200 / div).max(5), 100, seed);
    results.push(CheckResult::new(
        "lossless-prune-exactness",
        dev <= 1e-10,
        format!("max deviation {dev:.3e} (tolerance 1e-10)"),
    ));

    let (slope, pairs) = thm2_epsilon_sweep(seed);
    results.push(CheckResult::new(
        "prune-deviation-scaling",
        (slope - 1.0).abs() <= 0.2,
        format!(
            "log-log slope {slope:.4} over {:?}",
            pairs
                .iter()
                .map(|(e, d)| format!("ε={e:.0e}→{d:.2e}"))
                .collect::<Vec<_>>()
        ),
    ));

    let drift = thm3_boundary(1000, seed);
    results.push(CheckResult::new(
        "boundary-invariance",
        drift <= 1e-6,
        format!("max |c − 1| = {drift:.3e} over 1000 steps (tolerance 1e-6)"),
    ));

    let stats = thm3_bifurcation((1000 / div).max(10), seed);
    results.push(CheckResult::new(
        "bifurcation-classification",
        stats.misclassified == 0 && stats.sign_flips == 0 && stats.undecided == 0
            && stats.max_ratio_excess <= 1e-10,
        format!(
            "{} trajectories: {} preserve, {} prune, {} flips, {} undecided, ratio-bound excess {:.3e}",
            stats.trajectories,
            stats.preserve,
            stats.prune,
            stats.sign_flips,
            stats.undecided,
            stats.max_ratio_excess
        ),
    ));
    results.push(CheckResult::new(
        "recurrence-equivalence",
        stats.max_recurrence_rel_err <= 1e-10,
        format!(
            "max relative gap {:.3e} (tolerance 1e-10)",
            stats.max_recurrence_rel_err
        ),
    ));

    let report = check_lemma_f(&LemmaGridSpec::uniform(
        20,
        20,
        0.05,
        20.0,
        vec![0.0, 1e-4, 1e-2],
    ));
    results.push(CheckResult::new(
        "coefficient-lemma-grid",
        report.all_passed() && report.max_fd_rel_err <= 1e-4,
        format!(
            "{} points checked, {} outside the window skipped, max fd error {:.3e}",
            report.results.len(),
            report.skipped,
            report.max_fd_rel_err
        ),
    ));

    let (spread, drift) = embed_bias((500 / div).max(50), seed);
    results.push(CheckResult::new(
        "embed-zero-magnitude-bias",
        spread <= 1e-12 && drift <= 1e-6,
        format!("ratio spread {spread:.3e}, boundary drift {drift:.3e}"),
    ));

    results
}

/// Convenience entry point used by the CLI.
pub fn run_full_suite(seed: u64) -> Vec<CheckResult> {
    run_suite(seed, false)
}

/// True when the whole catalog of results is error: free.
pub fn all_passed(results: &[CheckResult]) -> Result<()> {
    let failures: Vec<&CheckResult> = results.iter().filter(|r| !r.passed).collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(crate::error::Error::Verification(format!(
            "{} of {} checks failed: {}",
            failures.len(),
            results.len(),
            failures
                .iter()
                .map(|r| r.name.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )))
    }
}
