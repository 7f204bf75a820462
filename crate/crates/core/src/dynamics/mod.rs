//! Standalone lab for the gradient-descent dynamics of `‖d·M‖₂`.
//!
//! A scalar `d` and a vector `M` descend the objective `|d|·‖M‖₂` with
//! weight decay `α` and step size `λ_t`. The decision ratio
//! `c_t = |d_t|/‖M_t‖₂` then obeys the closed-form recurrence
//! `c_{t+1} = f(c_t, λ_t)·c_t` with `f(x,y) = (1−α−y/x)/(1−α−xy)`, as long as
//! no coordinate changes sign and `c_t` stays inside the validity window
//! `[λ_t/(1−α), (1−α)/λ_t]`. Starting exactly at `c = 1` is invariant;
//! starting below sends `c` exponentially down (the channel keeps its
//! filter), starting above sends it exponentially up (the filter dies and
//! the channel is pruned).

pub mod sweep;

use ndarray::Array1;

use crate::error::{Error, Result};

/// Step-size schedule `t ↦ λ_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSchedule {
    Constant(f64),
    /// Piecewise-constant: starts at `initial`, switching to each `(t, λ)`
    /// from that step on. Switch points must be increasing.
    Piecewise { initial: f64, switches: Vec<(u64, f64)> },
}

impl LambdaSchedule {
    pub fn value(&self, t: u64) -> f64 {
        match self {
            LambdaSchedule::Constant(v) => *v,
            LambdaSchedule::Piecewise { initial, switches } => {
                let mut cur = *initial;
                for &(at, v) in switches {
                    if t >= at {
                        cur = v;
                    } else {
                        break;
                    }
                }
                cur
            }
        }
    }

    /// Infimum of λ_t over all steps.
    pub fn infimum(&self) -> f64 {
        match self {
            LambdaSchedule::Constant(v) => *v,
            LambdaSchedule::Piecewise { initial, switches } => switches
                .iter()
                .map(|&(_, v)| v)
                .fold(*initial, f64::min),
        }
    }

    pub fn supremum(&self) -> f64 {
        match self {
            LambdaSchedule::Constant(v) => *v,
            LambdaSchedule::Piecewise { initial, switches } => switches
                .iter()
                .map(|&(_, v)| v)
                .fold(*initial, f64::max),
        }
    }
}

/// State of one `(d, M)` descent.
#[derive(Debug, Clone)]
pub struct DynamicsState {
    pub d: f64,
    pub m: Array1<f64>,
    /// Step counter, indexes the λ schedule.
    pub t: u64,
    /// Weight decay, in `[0, 1)`.
    pub alpha: f64,
    pub lambda: LambdaSchedule,
}

impl DynamicsState {
    pub fn new(d: f64, m: Array1<f64>, alpha: f64, lambda: LambdaSchedule) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1), got {alpha}")));
        }
        if lambda.infimum() <= 0.0 {
            return Err(Error::Config("lambda schedule must stay positive".into()));
        }
        Ok(Self { d, m, t: 0, alpha, lambda })
    }

    pub fn m_norm(&self) -> f64 {
        self.m.dot(&self.m).sqrt()
    }

    /// The decision ratio `c = |d|/‖M‖₂`; `+∞` when `M` has vanished.
    pub fn c(&self) -> f64 {
        let n = self.m_norm();
        if n == 0.0 {
            f64::INFINITY
        } else {
            self.d.abs() / n
        }
    }
}

/// What one raw descent step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepReport {
    /// `d` or `M` is exactly zero; the objective is stuck and no step was
    /// taken.
    pub terminal: bool,
    /// Some coordinate of `M`, or `d` itself, crossed zero this step. The
    /// closed-form recurrence stops being valid here.
    pub sign_flip: bool,
}

/// One gradient-descent-with-decay step of `|d|·‖M‖₂`:
/// `d ← d − αd − sgn(d)·λ_t·‖M‖₂` and `M_i ← M_i − αM_i − λ_t·|d|·M_i/‖M‖₂`.
pub fn gd_step(state: &mut DynamicsState) -> StepReport {
    let norm = state.m_norm();
    if state.d == 0.0 || norm == 0.0 {
        return StepReport { terminal: true, sign_flip: false };
    }
    let lambda = state.lambda.value(state.t);
    let alpha = state.alpha;

    let old_d = state.d;
    let new_d = old_d - alpha * old_d - old_d.signum() * lambda * norm;
    let mut sign_flip = old_d * new_d < 0.0;
    state.d = new_d;

    let scale = lambda * old_d.abs() / norm;
    for v in state.m.iter_mut() {
        let old = *v;
        let new = old - alpha * old - scale * old;
        if old * new < 0.0 {
            sign_flip = true;
        }
        *v = new;
    }
    state.t += 1;
    StepReport { terminal: false, sign_flip }
}

/// The recurrence coefficient `f(x, y) = (1−α−y/x) / (1−α−xy)`.
pub fn f_coeff(x: f64, y: f64, alpha: f64) -> Result<f64> {
    debug_assert!(x > 0.0, "f is used with positive ratios only");
    let a = 1.0 - alpha;
    let denom = a - x * y;
    if denom.abs() <= 1e-12 {
        return Err(Error::SingularDenominator { x, y, alpha });
    }
    Ok((a - y / x) / denom)
}

/// Closed form of `∂f/∂x`.
pub fn f_partial_x(x: f64, y: f64, alpha: f64) -> Result<f64> {
    let a = 1.0 - alpha;
    let denom = a - x * y;
    if denom.abs() <= 1e-12 {
        return Err(Error::SingularDenominator { x, y, alpha });
    }
    let bracket = (x - y / a).powi(2) - (y / a).powi(2) + 1.0;
    Ok(y * a / (x * x * denom * denom) * bracket)
}

/// Closed form of `∂f/∂y`.
pub fn f_partial_y(x: f64, y: f64, alpha: f64) -> Result<f64> {
    let a = 1.0 - alpha;
    let denom = a - x * y;
    if denom.abs() <= 1e-12 {
        return Err(Error::SingularDenominator { x, y, alpha });
    }
    Ok(a * (x * x - 1.0) / (x * denom * denom))
}

/// Validity window `[λ/(1−α), (1−α)/λ]` for the ratio recurrence.
pub fn validity_window(lambda: f64, alpha: f64) -> (f64, f64) {
    let a = 1.0 - alpha;
    (lambda / a, a / lambda)
}

/// `c_{t+1} = f(c_t, λ_t)·c_t`, valid only inside the window.
pub fn recurrence_step(c: f64, lambda: f64, alpha: f64) -> Result<f64> {
    let (lo, hi) = validity_window(lambda, alpha);
    if !(lo <= c && c <= hi) {
        return Err(Error::WindowViolation { c, lo, hi });
    }
    Ok(f_coeff(c, lambda, alpha)? * c)
}

/// The enforced step-size ceiling `0.1·min((1−α)/c₀, (1−α)·c₀)`, a checkable
/// stand-in for "λ much smaller than both window edges".
pub fn safety_bound(c0: f64, alpha: f64) -> f64 {
    let a = 1.0 - alpha;
    0.1 * (a / c0).min(a * c0)
}

/// Trajectory classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// `c` crossed the lower window edge: `d → 0`, the filter survives.
    Preserve,
    /// `c` crossed the upper window edge: `M → 0`, the channel is prunable.
    Prune,
    /// Started exactly on `c = 1` and stayed there for the whole budget.
    Boundary,
    /// A coordinate changed sign; the recurrence hypotheses were violated.
    SignFlip,
    /// Budget exhausted inside the window without a crossing.
    Undecided,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Preserve => "preserve",
            Outcome::Prune => "prune",
            Outcome::Boundary => "boundary",
            Outcome::SignFlip => "sign-flip",
            Outcome::Undecided => "undecided",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub max_steps: u64,
    /// Keep stepping after a window exit (exploratory plotting only).
    pub continue_past_exit: bool,
    /// Record every k-th point; 0 records endpoints only.
    pub record_every: u64,
}

impl SimOptions {
    pub fn new(max_steps: u64) -> Self {
        Self {
            max_steps,
            continue_past_exit: false,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: u64,
    pub d: f64,
    pub m_norm: f64,
    pub c: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub outcome: Outcome,
    /// Steps taken when the outcome was decided (= total steps for
    /// `Boundary` and `Undecided`).
    pub steps_to_exit: u64,
    pub total_steps: u64,
    pub final_c: f64,
    /// The λ schedule exceeded the safety bound for this `c₀`.
    pub safety_violated: bool,
}

/// Runs [`gd_step`] until the budget, a window exit, or a sign flip, and
/// classifies the result. Degenerate starts (`d = 0` or `M = 0`) classify
/// immediately on the side they already occupy.
pub fn simulate_trajectory(s0: DynamicsState, opts: &SimOptions) -> Trajectory {
    let c0 = s0.c();
    let safety_violated =
        c0.is_finite() && c0 > 0.0 && s0.lambda.supremum() > safety_bound(c0, s0.alpha);

    let mut state = s0;
    let t0 = state.t;
    let mut points = Vec::new();
    let mut outcome: Option<Outcome> = None;
    let mut steps_to_exit = 0;

    let record = |points: &mut Vec<TrajectoryPoint>, state: &DynamicsState, elapsed: u64, opts: &SimOptions| {
        if opts.record_every > 0 && elapsed % opts.record_every == 0 {
            points.push(TrajectoryPoint {
                t: state.t,
                d: state.d,
                m_norm: state.m_norm(),
                c: state.c(),
            });
        }
    };
    record(&mut points, &state, 0, opts);

    loop {
        let elapsed = state.t - t0;
        if outcome.is_none() {
            let c = state.c();
            let (lo, hi) = validity_window(state.lambda.value(state.t), state.alpha);
            if c <= lo {
                outcome = Some(Outcome::Preserve);
                steps_to_exit = elapsed;
            } else if c >= hi {
                outcome = Some(Outcome::Prune);
                steps_to_exit = elapsed;
            }
        }
        if outcome.is_some() && !opts.continue_past_exit {
            break;
        }
        if elapsed >= opts.max_steps {
            break;
        }
        let report = gd_step(&mut state);
        if report.terminal {
            break;
        }
        record(&mut points, &state, state.t - t0, opts);
        if report.sign_flip && outcome.is_none() {
            outcome = Some(Outcome::SignFlip);
            steps_to_exit = state.t - t0;
        }
    }

    let total_steps = state.t - t0;
    let final_c = state.c();
    let last = TrajectoryPoint {
        t: state.t,
        d: state.d,
        m_norm: state.m_norm(),
        c: final_c,
    };
    if points.last() != Some(&last) {
        points.push(last);
    }
    let outcome = outcome.unwrap_or(if c0 == 1.0 {
        Outcome::Boundary
    } else {
        Outcome::Undecided
    });
    Trajectory {
        points,
        outcome,
        steps_to_exit: if matches!(outcome, Outcome::Boundary | Outcome::Undecided) {
            total_steps
        } else {
            steps_to_exit
        },
        total_steps,
        final_c,
        safety_violated,
    }
}

/// Grid spec for checking the coefficient lemma. `y` values are given as
/// fractions of `1−α` so the hypothesis `y ∈ (0, 1−α)` holds by
/// construction.
#[derive(Debug, Clone)]
pub struct LemmaGridSpec {
    pub x: Vec<f64>,
    pub y_fracs: Vec<f64>,
    pub alphas: Vec<f64>,
    pub fd_step: f64,
    pub fd_rel_tol: f64,
}

impl LemmaGridSpec {
    /// `nx × ny` grid per α with the stated ranges.
    pub fn uniform(nx: usize, ny: usize, x_lo: f64, x_hi: f64, alphas: Vec<f64>) -> Self {
        Self {
            x: linspace(x_lo, x_hi, nx),
            y_fracs: (1..=ny).map(|j| j as f64 / (ny + 1) as f64).collect(),
            alphas,
            fd_step: 1e-6,
            fd_rel_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LemmaPointResult {
    pub x: f64,
    pub y: f64,
    pub alpha: f64,
    pub f: f64,
    pub passed: bool,
    pub detail: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LemmaReport {
    pub results: Vec<LemmaPointResult>,
    /// Points with `x·y ≥ 1−α`: outside the recurrence validity window,
    /// where the coefficient is never applied.
    pub skipped: usize,
    pub max_fd_rel_err: f64,
}

impl LemmaReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| !r.passed).count()
    }
}

/// Checks the sign claims of the coefficient lemma on a grid, comparing the
/// closed-form partials against central finite differences.
///
/// Claims: for `x ∈ (0,1)`: `f < 1`, `∂f/∂x > 0`, `∂f/∂y < 0`; for `x > 1`:
/// `f > 1`, `∂f/∂x > 0`, `∂f/∂y > 0`. Points at `x = 1` assert `f = 1` and
/// `∂f/∂y = 0` instead.
pub fn check_lemma_f(spec: &LemmaGridSpec) -> LemmaReport {
    let mut results = Vec::new();
    let mut skipped = 0;
    let mut max_fd_rel_err = 0.0f64;
    let h = spec.fd_step;

    for &alpha in &spec.alphas {
        let a = 1.0 - alpha;
        for &x in &spec.x {
            for &frac in &spec.y_fracs {
                let y = frac * a;
                // Outside the validity window the recurrence never uses f;
                // a margin keeps the finite differences off the pole.
                if x * y >= a - 10.0 * h * (x + y) - 1e-9 {
                    skipped += 1;
                    continue;
                }
                let point = check_lemma_point(x, y, alpha, h, spec.fd_rel_tol, &mut max_fd_rel_err);
                results.push(point);
            }
        }
    }
    LemmaReport {
        results,
        skipped,
        max_fd_rel_err,
    }
}

fn check_lemma_point(
    x: f64,
    y: f64,
    alpha: f64,
    h: f64,
    fd_rel_tol: f64,
    max_fd_rel_err: &mut f64,
) -> LemmaPointResult {
    let fail = |msg: String, f: f64| LemmaPointResult {
        x,
        y,
        alpha,
        f,
        passed: false,
        detail: Some(msg),
    };

    let f = match f_coeff(x, y, alpha) {
        Ok(v) => v,
        Err(e) => return fail(format!("f undefined: {e}"), f64::NAN),
    };
    let dfdx = f_partial_x(x, y, alpha).expect("checked above");
    let dfdy = f_partial_y(x, y, alpha).expect("checked above");

    let fd_x = (f_coeff(x + h, y, alpha).unwrap() - f_coeff(x - h, y, alpha).unwrap()) / (2.0 * h);
    let fd_y = (f_coeff(x, y + h, alpha).unwrap() - f_coeff(x, y - h, alpha).unwrap()) / (2.0 * h);

    let rel = |a: f64, b: f64| {
        let denom = a.abs().max(b.abs());
        if denom <= 1e-9 {
            0.0
        } else {
            (a - b).abs() / denom
        }
    };
    let err_x = rel(dfdx, fd_x);
    let err_y = rel(dfdy, fd_y);
    *max_fd_rel_err = max_fd_rel_err.max(err_x).max(err_y);

    if err_x > fd_rel_tol || err_y > fd_rel_tol {
        return fail(
            format!("finite differences disagree: dx err {err_x}, dy err {err_y}"),
            f,
        );
    }

    let ok = if x < 1.0 {
        f < 1.0 && dfdx > 0.0 && dfdy < 0.0
    } else if x > 1.0 {
        f > 1.0 && dfdx > 0.0 && dfdy > 0.0
    } else {
        (f - 1.0).abs() <= 1e-12 && dfdy.abs() <= 1e-12
    };
    if !ok {
        return fail(
            format!("sign claims violated: f={f}, df/dx={dfdx}, df/dy={dfdy}"),
            f,
        );
    }
    LemmaPointResult {
        x,
        y,
        alpha,
        f,
        passed: true,
        detail: None,
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Log-spaced grid between positive endpoints; the endpoints themselves are
/// exact.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let mut v: Vec<f64> = linspace(lo.ln(), hi.ln(), n).into_iter().map(f64::exp).collect();
    v[0] = lo;
    v[n - 1] = hi;
    v
}
