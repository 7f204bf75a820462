//! The two-phase regularize-and-prune training loop.
//!
//! Starting from a trained model: extend the target submodule with
//! `embed(c)`, minimize `loss + γ_t·‖DW‖₂,₁` until the regularizer falls
//! below ε (or all ratios bifurcate past κ, or the step budget runs out),
//! prune by the ratio threshold, repeat once more with `D̄ = 0` to eliminate
//! the second diagonal, then strip the extension and finetune. Every prune
//! event is bracketed by evaluations on the same held-out split and verified
//! for function preservation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::catalyst::{catalyst_reg_grad, embed};
use crate::data::SplitData;
use crate::error::{Error, Result};
use crate::nn::{accuracy_percent, Model, Sgd, SubmoduleSlot};
use crate::prune::{prune, select_prune_indices, verify_function_preservation};
use crate::report::count_macs_params;

/// Piecewise-constant learning rate: `base`, multiplied by `decay_ratio`
/// at each epoch listed in `decay_epochs`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub decay_epochs: Vec<u64>,
    pub decay_ratio: f64,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            decay_epochs: Vec::new(),
            decay_ratio: 0.1,
        }
    }

    pub fn at_epoch(&self, epoch: u64) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.base * self.decay_ratio.powi(decays as i32)
    }
}

/// All hyperparameters of the prune pipeline.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub lr_opt1: LrSchedule,
    pub lr_opt2: LrSchedule,
    pub lr_finetune: LrSchedule,
    /// Weight decay for all dense weights and biases.
    pub alpha_theta: f64,
    /// Weight decay for the catalyst diagonals.
    pub alpha_d: f64,
    /// Base regularization weight for the first optimization phase.
    pub gamma0: f64,
    /// Base regularization weight for the second phase.
    pub gamma0_prime: f64,
    /// Regularizer stop threshold for the first phase.
    pub epsilon: f64,
    /// Regularizer stop threshold for the second phase.
    pub epsilon_prime: f64,
    /// Bifurcation stop: phase ends early once `|ln c_i| > κ` for every
    /// non-degenerate channel. `f64::INFINITY` disables it.
    #[serde(with = "kappa_serde")]
    pub kappa: f64,
    /// Step budget for the first phase.
    pub t_opt1: u64,
    /// Step budget for the second phase.
    pub t_opt2: u64,
    /// Embed scale; 1 places every channel on the decision boundary.
    pub c_init: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub pretrain_epochs: u64,
    pub finetune_epochs: u64,
    /// SGD momentum; 0 for dynamics-faithful plain gradient descent.
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_opt1: LrSchedule::constant(0.05),
            lr_opt2: LrSchedule::constant(0.05),
            lr_finetune: LrSchedule::constant(0.02),
            alpha_theta: 5e-4,
            alpha_d: 0.0,
            gamma0: 0.02,
            gamma0_prime: 0.02,
            epsilon: 1e-6,
            epsilon_prime: 1e-6,
            kappa: f64::INFINITY,
            t_opt1: 8000,
            t_opt2: 8000,
            c_init: 1.0,
            seed: 42,
            batch_size: 64,
            pretrain_epochs: 15,
            finetune_epochs: 20,
            momentum: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_opt1", self.lr_opt1.base),
            ("lr_opt2", self.lr_opt2.base),
            ("lr_finetune", self.lr_finetune.base),
            ("gamma0", self.gamma0),
            ("gamma0_prime", self.gamma0_prime),
            ("epsilon", self.epsilon),
            ("epsilon_prime", self.epsilon_prime),
            ("kappa", self.kappa),
            ("c_init", self.c_init),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("alpha_theta", self.alpha_theta), ("alpha_d", self.alpha_d)] {
            if v < 0.0 {
                return Err(Error::Config(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.t_opt1 == 0 || self.t_opt2 == 0 {
            return Err(Error::Config("step budgets must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Regularization weight at a given epoch since phase start:
/// `γ_t = γ₀·(1 + 0.25·t)`.
pub fn gamma_schedule(gamma0: f64, epoch: u64) -> f64 {
    gamma0 * (1.0 + 0.25 * epoch as f64)
}

/// JSON cannot carry `inf` as a number; κ = ∞ round-trips as the string
/// `"inf"`.
mod kappa_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) if s == "inf" || s == "infinity" => Ok(f64::INFINITY),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad kappa value '{s}'"))),
        }
    }
}

/// Phase tag for step records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Opt1,
    Prune1Pre,
    Prune1Post,
    Opt2,
    Prune2Pre,
    Prune2Post,
    Finetune,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Opt1 => "opt1",
            Phase::Prune1Pre => "prune1-pre",
            Phase::Prune1Post => "prune1-post",
            Phase::Opt2 => "opt2",
            Phase::Prune2Pre => "prune2-pre",
            Phase::Prune2Post => "prune2-post",
            Phase::Finetune => "finetune",
        }
    }

    /// Rows produced by an optimizer update (as opposed to prune boundaries).
    pub fn is_training(self) -> bool {
        matches!(
            self,
            Phase::Pretrain | Phase::Opt1 | Phase::Opt2 | Phase::Finetune
        )
    }
}

/// The two regularized phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptPhase {
    Opt1,
    Opt2,
}

impl OptPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            OptPhase::Opt1 => "opt1",
            OptPhase::Opt2 => "opt2",
        }
    }
}

/// Why an optimization phase ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `‖DW‖₂,₁` fell below the phase threshold.
    Epsilon,
    /// Every non-degenerate channel bifurcated past κ.
    Kappa,
    /// Step budget exhausted.
    Budget,
}

/// Named parameter snapshots taken at phase boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Checkpoint {
    PostEmbed,
    PostOpt1,
    PostPrune1,
    PostOpt2,
    PostPrune2,
    Final,
}

impl Checkpoint {
    pub fn as_str(self) -> &'static str {
        match self {
            Checkpoint::PostEmbed => "post-embed",
            Checkpoint::PostOpt1 => "post-opt1",
            Checkpoint::PostPrune1 => "post-prune1",
            Checkpoint::PostOpt2 => "post-opt2",
            Checkpoint::PostPrune2 => "post-prune2",
            Checkpoint::Final => "final",
        }
    }

    pub fn all() -> [Checkpoint; 6] {
        [
            Checkpoint::PostEmbed,
            Checkpoint::PostOpt1,
            Checkpoint::PostPrune1,
            Checkpoint::PostOpt2,
            Checkpoint::PostPrune2,
            Checkpoint::Final,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub phase: Phase,
    pub train_loss: f64,
    /// `‖DW‖₂,₁` of the extended submodule; 0 once the extension is gone.
    pub reg_value: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSnapshot {
    pub checkpoint: Checkpoint,
    pub c: Vec<f64>,
    pub filter_norm: Vec<f64>,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneEvent {
    pub phase: OptPhase,
    pub pruned: Vec<usize>,
    /// Post-minus-pre test accuracy, percentage points.
    pub delta_acc: f64,
    pub delta_loss: f64,
    pub macs_before: u64,
    pub macs_after: u64,
    pub params_before: u64,
    pub params_after: u64,
    /// Max forward deviation of the submodule across the prune, measured on
    /// seeded random inputs.
    pub max_deviation: f64,
}

/// Complete training record of one experiment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<ChannelSnapshot>,
    pub prune_events: Vec<PruneEvent>,
    /// Channels flagged at embed time with zero filter and zero catalyst.
    pub degenerate_channels: Vec<usize>,
    pub warnings: Vec<String>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_step(&self) -> u64 {
        self.steps.last().map(|s| s.step).unwrap_or(0)
    }

    /// Number of optimizer updates recorded (excludes prune-boundary rows).
    pub fn training_steps(&self) -> u64 {
        self.steps.iter().filter(|s| s.phase.is_training()).count() as u64
    }

    pub fn snapshot(&self, checkpoint: Checkpoint) -> Option<&ChannelSnapshot> {
        self.snapshots.iter().find(|s| s.checkpoint == checkpoint)
    }
}

fn take_snapshot(log: &mut RunLog, model: &Model, checkpoint: Checkpoint) {
    let snapshot = match &model.slot {
        SubmoduleSlot::Extended(ext) => ChannelSnapshot {
            checkpoint,
            c: ext.c_ratios().to_vec(),
            filter_norm: crate::nn::filter_norms(ext.sub.w.view()).to_vec(),
            d: ext.d.delta.to_vec(),
        },
        SubmoduleSlot::Plain(sub) => {
            let norms = crate::nn::filter_norms(sub.w.view()).to_vec();
            let n = norms.len();
            ChannelSnapshot {
                checkpoint,
                c: vec![0.0; n],
                filter_norm: norms,
                d: vec![0.0; n],
            }
        }
    };
    log.snapshots.push(snapshot);
}

/// Shared training state: batch shuffling stream, optimizer state, and the
/// global step counter that stays monotone across phases.
struct Trainer<'a> {
    data: &'a SplitData,
    batch_size: usize,
    rng: ChaCha8Rng,
    sgd: Sgd,
    step: u64,
}

impl<'a> Trainer<'a> {
    fn new(data: &'a SplitData, cfg: &TrainConfig, log: &RunLog) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2);
        Self {
            data,
            batch_size: cfg.batch_size,
            rng,
            sgd: Sgd::new(cfg.momentum),
            step: log.last_step(),
        }
    }

    /// Test-split loss and accuracy (percent). This fixed held-out split is
    /// also the before/after probe for prune events.
    fn eval(&self, model: &Model) -> Result<(f64, f64)> {
        let logits = model.forward_batch(self.data.test.x.view())?;
        let (loss, _) = crate::nn::softmax_cross_entropy(&logits, &self.data.test.y)?;
        let acc = accuracy_percent(&logits, &self.data.test.y);
        Ok((loss, acc))
    }

    fn train_loss_full(&self, model: &Model) -> Result<f64> {
        model.loss(self.data.train.x.view(), &self.data.train.y)
    }

    fn epoch_batches(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.batch_size)
            .map(|c| c.to_vec())
            .collect()
    }

    /// Plain SGD (no regularizer) for a fixed number of epochs, or until
    /// `max_steps` when given.
    fn train_plain(
        &mut self,
        model: &mut Model,
        cfg: &TrainConfig,
        lr: &LrSchedule,
        epochs: u64,
        max_steps: Option<u64>,
        phase: Phase,
        log: &mut RunLog,
    ) -> Result<()> {
        let mut steps_in_phase = 0u64;
        'outer: for epoch in 0..epochs {
            let lr_now = lr.at_epoch(epoch);
            for batch in self.epoch_batches() {
                if let Some(budget) = max_steps {
                    if steps_in_phase >= budget {
                        break 'outer;
                    }
                }
                let (bx, by) = self.data.train.select(&batch);
                let (loss, grads) = model
                    .loss_and_grads(bx.view(), &by)
                    .map_err(|e| e.at_step(self.step + 1))?;
                self.sgd
                    .step(model, &grads, lr_now, cfg.alpha_theta, cfg.alpha_d);
                self.step += 1;
                steps_in_phase += 1;
                let (test_loss, test_acc) = self.eval(model)?;
                log.steps.push(StepRecord {
                    step: self.step,
                    phase,
                    train_loss: loss,
                    reg_value: reg_of(model),
                    test_loss,
                    test_acc,
                });
            }
        }
        Ok(())
    }

    /// One regularized phase of the prune loop. Stops on ε, κ, or budget.
    fn run_opt_phase(
        &mut self,
        model: &mut Model,
        cfg: &TrainConfig,
        which: OptPhase,
        log: &mut RunLog,
    ) -> Result<StopReason> {
        let (lr_sched, gamma0, eps_stop, budget, phase) = match which {
            OptPhase::Opt1 => (
                &cfg.lr_opt1,
                cfg.gamma0,
                cfg.epsilon,
                cfg.t_opt1,
                Phase::Opt1,
            ),
            OptPhase::Opt2 => (
                &cfg.lr_opt2,
                cfg.gamma0_prime,
                cfg.epsilon_prime,
                cfg.t_opt2,
                Phase::Opt2,
            ),
        };
        {
            let ext = match &model.slot {
                SubmoduleSlot::Extended(e) => e,
                SubmoduleSlot::Plain(_) => {
                    return Err(Error::Config(
                        "optimization phase requires an extended submodule".into(),
                    ))
                }
            };
            if which == OptPhase::Opt2 && ext.dbar.delta.iter().any(|&v| v != 0.0) {
                return Err(Error::Config(
                    "second phase requires D̄ = 0 (run the first prune first)".into(),
                ));
            }
        }

        let mut steps_in_phase = 0u64;
        for epoch in 0.. {
            let gamma = gamma_schedule(gamma0, epoch);
            let lr_now = lr_sched.at_epoch(epoch);
            for batch in self.epoch_batches() {
                if steps_in_phase >= budget {
                    return Ok(StopReason::Budget);
                }
                let (bx, by) = self.data.train.select(&batch);
                let (loss, mut grads) = model
                    .loss_and_grads(bx.view(), &by)
                    .map_err(|e| e.at_step(self.step + 1))?;

                // Analytic regularizer gradient; the subgradient convention
                // keeps zero entries and zero rows fixed.
                if let SubmoduleSlot::Extended(ext) = &model.slot {
                    let (g_d, g_w) = catalyst_reg_grad(&ext.d, ext.sub.w.view());
                    grads.w.scaled_add(gamma, &g_w);
                    if let Some(gd) = grads.d.as_mut() {
                        gd.scaled_add(gamma, &g_d);
                    }
                }
                // The second phase trains (θ, D) only; D̄ is pinned at zero.
                if which == OptPhase::Opt2 {
                    if let Some(gdbar) = grads.dbar.as_mut() {
                        gdbar.fill(0.0);
                    }
                }

                self.sgd
                    .step(model, &grads, lr_now, cfg.alpha_theta, cfg.alpha_d);
                self.step += 1;
                steps_in_phase += 1;

                let ext = match &model.slot {
                    SubmoduleSlot::Extended(e) => e,
                    SubmoduleSlot::Plain(_) => unreachable!("slot checked above"),
                };
                let reg = ext.reg_value();
                if !reg.is_finite() {
                    return Err(Error::Numerical {
                        step: self.step,
                        message: format!("regularizer diverged ({reg})"),
                    });
                }
                let (test_loss, test_acc) = self.eval(model)?;
                log.steps.push(StepRecord {
                    step: self.step,
                    phase,
                    train_loss: loss,
                    reg_value: reg,
                    test_loss,
                    test_acc,
                });

                if reg < eps_stop {
                    return Ok(StopReason::Epsilon);
                }
                if cfg.kappa.is_finite() {
                    let ratios = ext.c_ratios();
                    let degenerate = ext.degenerate_channels();
                    let all_bifurcated = ratios
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !degenerate.contains(i))
                        .all(|(_, &c)| c.ln().abs() > cfg.kappa);
                    if all_bifurcated {
                        return Ok(StopReason::Kappa);
                    }
                }
            }
        }
        unreachable!("epoch loop exits via budget or early stop")
    }
}

fn reg_of(model: &Model) -> f64 {
    match &model.slot {
        SubmoduleSlot::Extended(ext) => ext.reg_value(),
        SubmoduleSlot::Plain(_) => 0.0,
    }
}

fn prune_event(
    model: &mut Model,
    trainer: &mut Trainer,
    cfg: &TrainConfig,
    which: OptPhase,
    ckpt_before: Checkpoint,
    ckpt_after: Checkpoint,
    log: &mut RunLog,
) -> Result<()> {
    take_snapshot(log, model, ckpt_before);
    let ext = match &model.slot {
        SubmoduleSlot::Extended(e) => e.clone(),
        SubmoduleSlot::Plain(_) => {
            return Err(Error::Config("prune event requires an extended submodule".into()))
        }
    };
    let p = select_prune_indices(&ext);
    let (macs_before, params_before) = count_macs_params(model);
    let (test_loss_b, test_acc_b) = trainer.eval(model)?;
    let phase_pre = match which {
        OptPhase::Opt1 => Phase::Prune1Pre,
        OptPhase::Opt2 => Phase::Prune2Pre,
    };
    log.steps.push(StepRecord {
        step: trainer.step,
        phase: phase_pre,
        train_loss: trainer.train_loss_full(model)?,
        reg_value: ext.reg_value(),
        test_loss: test_loss_b,
        test_acc: test_acc_b,
    });

    let contracted = prune(&ext, &p)?;
    let max_deviation = verify_function_preservation(
        &ext,
        &contracted,
        64,
        ext.sub.input_dim(),
        cfg.seed ^ 0x5eed_cafe,
    )?;
    model.slot = SubmoduleSlot::Extended(contracted);
    trainer.sgd.reset();

    let (macs_after, params_after) = count_macs_params(model);
    let (test_loss_a, test_acc_a) = trainer.eval(model)?;
    let phase_post = match which {
        OptPhase::Opt1 => Phase::Prune1Post,
        OptPhase::Opt2 => Phase::Prune2Post,
    };
    log.steps.push(StepRecord {
        step: trainer.step,
        phase: phase_post,
        train_loss: trainer.train_loss_full(model)?,
        reg_value: reg_of(model),
        test_loss: test_loss_a,
        test_acc: test_acc_a,
    });
    take_snapshot(log, model, ckpt_after);

    log.prune_events.push(PruneEvent {
        phase: which,
        pruned: p.indices().to_vec(),
        delta_acc: test_acc_a - test_acc_b,
        delta_loss: test_loss_a - test_loss_b,
        macs_before,
        macs_after,
        params_before,
        params_after,
        max_deviation,
    });
    Ok(())
}

/// Plain pretraining/baseline helper: mean cross-entropy SGD, no
/// regularizer, logged under the given phase tag.
pub fn train_plain(
    model: &mut Model,
    cfg: &TrainConfig,
    data: &SplitData,
    lr: &LrSchedule,
    epochs: u64,
    max_steps: Option<u64>,
    phase: Phase,
    log: &mut RunLog,
) -> Result<()> {
    let mut trainer = Trainer::new(data, cfg, log);
    trainer.train_plain(model, cfg, lr, epochs, max_steps, phase, log)
}

/// One regularized phase. Exposed for diagnostics; the full pipeline is
/// [`catalyst_prune_full`].
pub fn run_opt_phase(
    model: &mut Model,
    cfg: &TrainConfig,
    which: OptPhase,
    data: &SplitData,
    log: &mut RunLog,
) -> Result<StopReason> {
    let mut trainer = Trainer::new(data, cfg, log);
    trainer.run_opt_phase(model, cfg, which, log)
}

/// The full pipeline on an already-trained model holding a plain submodule:
/// embed → regularize → prune → regularize (D̄ = 0) → prune → strip the
/// extension → finetune. Returns the contracted model; the log records every
/// step, snapshot, and prune event.
pub fn catalyst_prune_full(
    mut model: Model,
    cfg: &TrainConfig,
    data: &SplitData,
    log: &mut RunLog,
) -> Result<Model> {
    cfg.validate()?;
    model.validate()?;
    let sub = match model.slot {
        SubmoduleSlot::Plain(s) => s,
        SubmoduleSlot::Extended(_) => {
            return Err(Error::Config("model is already extended".into()))
        }
    };
    let ext = embed(sub, cfg.c_init)?;
    log.degenerate_channels = ext.degenerate_channels();
    if !log.degenerate_channels.is_empty() {
        log.warnings.push(format!(
            "channels with zero filters at embed time: {:?}",
            log.degenerate_channels
        ));
    }
    model.slot = SubmoduleSlot::Extended(ext);
    take_snapshot(log, &model, Checkpoint::PostEmbed);

    let mut trainer = Trainer::new(data, cfg, log);

    trainer.run_opt_phase(&mut model, cfg, OptPhase::Opt1, log)?;
    prune_event(
        &mut model,
        &mut trainer,
        cfg,
        OptPhase::Opt1,
        Checkpoint::PostOpt1,
        Checkpoint::PostPrune1,
        log,
    )?;

    trainer.run_opt_phase(&mut model, cfg, OptPhase::Opt2, log)?;
    prune_event(
        &mut model,
        &mut trainer,
        cfg,
        OptPhase::Opt2,
        Checkpoint::PostOpt2,
        Checkpoint::PostPrune2,
        log,
    )?;

    // After the second prune both diagonals are zero: ψ₀,₀ = σ exactly, so
    // dropping the extension cannot change the function.
    let ext = match model.slot {
        SubmoduleSlot::Extended(e) => e,
        SubmoduleSlot::Plain(_) => unreachable!("slot is extended after prune"),
    };
    debug_assert!(ext.d.delta.iter().all(|&v| v == 0.0));
    model.slot = SubmoduleSlot::Plain(ext.sub);
    trainer.sgd.reset();

    trainer.train_plain(
        &mut model,
        cfg,
        &cfg.lr_finetune,
        cfg.finetune_epochs,
        None,
        Phase::Finetune,
        log,
    )?;
    take_snapshot(log, &model, Checkpoint::Final);
    Ok(model)
}
