//! The leap loop: train, checkpoint, speculate, verify, and fast-forward on
//! acceptance; plus cascaded speculation from a single checkpoint.
//!
//! A rejected speculation has no side effects on the run: parameters,
//! optimizer state, step counter, history and loss logs are untouched. An
//! accepted leap replaces θ with θ̂, advances the step counter and optimizer
//! state by `K`, and clears the history window, since finite-difference
//! predictors need real training deltas. The next checkpoint falls on the next
//! multiple of Δ at or after `t + K`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{AdamHyper, AdamState, FastForwardPolicy};
use crate::param::ParamVector;
use crate::predict::{
    predict_linear, predict_momentum, predict_momentum_descent, predict_quadratic,
    predict_quadratic_exact, MomentumVariant, Prediction, PredictorId,
};
use crate::regime::{classify, RegimeLabel, Thresholds};
use crate::tasks::Task;
use crate::trajectory::{recent_loss_std, Checkpoint, HistoryWindow};
use crate::verify::{decide, Criterion, Decision};

/// Depth `D` and per-stage horizon `K` of a cascade.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CascadeConfig {
    pub depth: u32,
    pub k: u64,
}

impl CascadeConfig {
    pub const fn defaults() -> [CascadeConfig; 3] {
        [
            CascadeConfig { depth: 4, k: 25 },
            CascadeConfig { depth: 2, k: 50 },
            CascadeConfig { depth: 10, k: 10 },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.k == 0 {
            return Err(Error::Config(format!(
                "cascade depth and K must be >= 1 (got D={}, K={})",
                self.depth, self.k
            )));
        }
        Ok(())
    }

    /// Steps covered if every stage is accepted.
    pub fn total_advance(&self) -> u64 {
        self.depth as u64 * self.k
    }
}

/// What a speculation needs besides the history window.
#[derive(Clone, Copy)]
pub struct SpeculationContext<'a> {
    pub task: &'a dyn Task,
    pub hyper: &'a AdamHyper,
    pub momentum_variant: MomentumVariant,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyParams {
    pub epsilon: f64,
    pub loss_window: usize,
}

impl VerifyParams {
    /// σ_L over the loss log, or `None` with fewer than two losses.
    pub fn sigma(&self, loss_log: &[f64]) -> Option<f64> {
        recent_loss_std(loss_log, self.loss_window).ok()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Speculation {
    pub prediction: Prediction,
    pub l_hat: f64,
}

/// Applies `predictor` to the window. Errors with `InsufficientHistory` when
/// the window is too short for the predictor.
pub fn predict_from_window(
    ctx: &SpeculationContext<'_>,
    window: &HistoryWindow,
    predictor: PredictorId,
    k: u64,
) -> Result<Prediction> {
    let needed = predictor.history_needed();
    if window.len() < needed {
        return Err(Error::InsufficientHistory {
            needed,
            available: window.len(),
        });
    }
    let cur = window.current().expect("non-empty window");
    let delta = window.delta();
    match predictor {
        PredictorId::Momentum => momentum(ctx, cur, &cur.theta, k),
        PredictorId::Linear => predict_linear(&cur.theta, &window.back(1).unwrap().theta, delta, k),
        PredictorId::Quadratic => predict_quadratic(
            &cur.theta,
            &window.back(1).unwrap().theta,
            &window.back(2).unwrap().theta,
            delta,
            k,
        ),
        PredictorId::QuadraticExact => predict_quadratic_exact(
            &cur.theta,
            &window.back(1).unwrap().theta,
            &window.back(2).unwrap().theta,
            delta,
            k,
        ),
    }
}

// Momentum extrapolation from `from`, using the moments stored in `ckpt`.
fn momentum(ctx: &SpeculationContext<'_>, ckpt: &Checkpoint, from: &ParamVector, k: u64) -> Result<Prediction> {
    match ctx.momentum_variant {
        MomentumVariant::Paper => predict_momentum(from, &ckpt.moments.m, &ckpt.moments.v, k, ctx.hyper.eps),
        MomentumVariant::Descent => predict_momentum_descent(from, &ckpt.moments, ckpt.step, ctx.hyper, k),
    }
}

/// Predicts θ̂ and evaluates its validation loss. Training state is not touched.
pub fn speculate(
    ctx: &SpeculationContext<'_>,
    window: &HistoryWindow,
    predictor: PredictorId,
    k: u64,
) -> Result<Speculation> {
    let prediction = predict_from_window(ctx, window, predictor, k)?;
    let l_hat = if prediction.finite {
        ctx.task.validation_loss(&prediction.theta_hat)
    } else {
        f64::NAN
    };
    Ok(Speculation { prediction, l_hat })
}

/// Speculates and runs all three acceptance criteria against the newest
/// checkpoint's loss.
pub fn evaluate(
    ctx: &SpeculationContext<'_>,
    window: &HistoryWindow,
    loss_log: &[f64],
    predictor: PredictorId,
    k: u64,
    verify: &VerifyParams,
) -> Result<(Speculation, Decision)> {
    let spec = speculate(ctx, window, predictor, k)?;
    let l_t = window.current().expect("speculate checked length").val_loss;
    let decision = decide(spec.l_hat, l_t, verify.sigma(loss_log), verify.epsilon)?;
    Ok((spec, decision))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeapConfig {
    pub predictor: PredictorId,
    pub k: u64,
    pub criterion: Criterion,
    pub gating: bool,
    pub ff_policy: FastForwardPolicy,
    /// Speculate and verify as usual but never apply.
    pub force_reject: bool,
    pub verify: VerifyParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeapEvent {
    pub seed: u64,
    pub step_from: u64,
    pub k: u64,
    pub predictor: PredictorId,
    pub decision: Decision,
    pub applied: bool,
    pub criterion_used: Criterion,
    pub regime_at_leap: RegimeLabel,
    #[serde(with = "crate::serde_f64")]
    pub displacement_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainerOptions {
    pub seed: u64,
    pub delta: u64,
    pub total_steps: u64,
    pub hyper: AdamHyper,
    /// Regimes are labeled as checkpoints are recorded when set; otherwise
    /// every checkpoint stays `unknown` until labeled later.
    pub thresholds: Option<Thresholds>,
    pub momentum_variant: MomentumVariant,
}

/// Everything a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub seed: u64,
    pub checkpoints: Vec<Arc<Checkpoint>>,
    /// Per checkpoint, similarity to the predecessor exactly Δ earlier.
    pub similarities: Vec<Option<f64>>,
    pub train_losses: Vec<f64>,
    pub final_theta: ParamVector,
    pub final_step: u64,
    pub skipped_steps: u64,
    pub events: Vec<LeapEvent>,
}

impl TrainOutcome {
    pub fn val_losses(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.val_loss).collect()
    }
}

/// A single training run that owns its parameters and optimizer state.
pub struct Trainer<'a> {
    task: &'a dyn Task,
    opts: TrainerOptions,
    theta: ParamVector,
    opt: AdamState,
    step: u64,
    window: HistoryWindow,
    checkpoints: Vec<Arc<Checkpoint>>,
    similarities: Vec<Option<f64>>,
    val_losses: Vec<f64>,
    train_losses: Vec<f64>,
    skipped_steps: u64,
    events: Vec<LeapEvent>,
}

impl<'a> Trainer<'a> {
    pub fn new(task: &'a dyn Task, opts: TrainerOptions) -> Self {
        assert!(opts.delta > 0, "checkpoint spacing must be positive");
        let theta = task.init_params(opts.seed);
        let opt = AdamState::new(theta.len(), opts.hyper.clone());
        Trainer {
            task,
            window: HistoryWindow::new(opts.delta),
            theta,
            opt,
            step: 0,
            checkpoints: Vec::new(),
            similarities: Vec::new(),
            val_losses: Vec::new(),
            train_losses: Vec::new(),
            skipped_steps: 0,
            events: Vec::new(),
            opts,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn theta(&self) -> &ParamVector {
        &self.theta
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.opt
    }

    pub fn window(&self) -> &HistoryWindow {
        &self.window
    }

    pub fn checkpoints(&self) -> &[Arc<Checkpoint>] {
        &self.checkpoints
    }

    pub fn val_losses(&self) -> &[f64] {
        &self.val_losses
    }

    pub fn train_losses(&self) -> &[f64] {
        &self.train_losses
    }

    pub fn skipped_steps(&self) -> u64 {
        self.skipped_steps
    }

    pub fn events(&self) -> &[LeapEvent] {
        &self.events
    }

    fn context(&self) -> SpeculationContext<'_> {
        SpeculationContext {
            task: self.task,
            hyper: &self.opts.hyper,
            momentum_variant: self.opts.momentum_variant,
        }
    }

    /// One gradient update.
    pub fn train_step(&mut self) -> Result<()> {
        let diverged = |step: u64, e: Error| Error::Diverged {
            step,
            reason: e.to_string(),
        };
        let batch = self.task.batch(self.opts.seed, self.step);
        let lg = self
            .task
            .loss_and_grad(&self.theta, &batch)
            .map_err(|e| diverged(self.step, e))?;
        if !lg.loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                reason: format!("training loss {}", lg.loss),
            });
        }
        let next = self
            .opt
            .apply_update(&self.theta, &lg.grad)
            .map_err(|e| diverged(self.step, e))?;
        if !next.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                reason: "parameters became non-finite".into(),
            });
        }
        self.theta = next;
        self.step += 1;
        self.train_losses.push(lg.loss);
        Ok(())
    }

    /// Records a checkpoint at the current step, which must be a multiple of Δ.
    pub fn record_checkpoint(&mut self) -> Result<Arc<Checkpoint>> {
        if !self.step.is_multiple_of(self.opts.delta) {
            return Err(Error::Ineligible(format!(
                "step {} is not a checkpoint boundary (delta {})",
                self.step, self.opts.delta
            )));
        }
        let val_loss = self.task.validation_loss(&self.theta);
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                reason: format!("validation loss {val_loss}"),
            });
        }
        let fingerprint = self.task.fingerprint(&self.theta)?;
        let similarity = match self.checkpoints.last() {
            Some(prev) if prev.step + self.opts.delta == self.step => {
                Some(crate::param::cosine_similarity(&fingerprint, &prev.fingerprint)?)
            }
            _ => None,
        };
        let regime = match (similarity, &self.opts.thresholds) {
            (Some(s), Some(th)) => classify(s, th),
            _ => RegimeLabel::Unknown,
        };
        let ckpt = Arc::new(Checkpoint {
            step: self.step,
            theta: self.theta.clone(),
            moments: self.opt.snapshot_moments(),
            val_loss,
            fingerprint,
            regime,
            seed: self.opts.seed,
        });
        if self.window.push(ckpt.clone()).is_err() {
            self.window.clear();
            self.window.push(ckpt.clone())?;
        }
        self.checkpoints.push(ckpt.clone());
        self.similarities.push(similarity);
        self.val_losses.push(val_loss);
        Ok(ckpt)
    }

    /// At a checkpoint boundary: speculate, verify, and apply on acceptance.
    ///
    /// Returns `None` when no speculation was attempted (gated regime, too
    /// little history, or a leap that would overshoot the run).
    pub fn leap_or_continue(&mut self, cfg: &LeapConfig) -> Result<Option<LeapEvent>> {
        let Some(cur) = self.window.current().cloned() else {
            return Ok(None);
        };
        if cur.step != self.step {
            return Ok(None);
        }
        if cfg.gating && !cur.regime.is_favorable() {
            return Ok(None);
        }
        if self.step + cfg.k > self.opts.total_steps {
            return Ok(None);
        }
        let ctx = self.context();
        let (spec, decision) = match evaluate(&ctx, &self.window, &self.val_losses, cfg.predictor, cfg.k, &cfg.verify) {
            Ok(r) => r,
            Err(Error::InsufficientHistory { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let applied = !cfg.force_reject && decision.passes(cfg.criterion);
        let event = LeapEvent {
            seed: self.opts.seed,
            step_from: self.step,
            k: cfg.k,
            predictor: cfg.predictor,
            decision,
            applied,
            criterion_used: cfg.criterion,
            regime_at_leap: cur.regime,
            displacement_norm: spec.prediction.displacement_norm,
        };
        if applied {
            self.theta = spec.prediction.theta_hat;
            self.opt.fast_forward(cfg.k, cfg.ff_policy);
            self.step += cfg.k;
            self.skipped_steps += cfg.k;
            self.window.clear();
        }
        self.events.push(event.clone());
        Ok(Some(event))
    }

    /// Trains to `total_steps`, checkpointing every Δ steps. With a leap
    /// configuration, a speculation is attempted at every checkpoint and
    /// `on_event` sees each one as it happens.
    pub fn run(
        &mut self,
        leap: Option<&LeapConfig>,
        on_event: &mut dyn FnMut(&LeapEvent) -> Result<()>,
    ) -> Result<()> {
        while self.step < self.opts.total_steps {
            self.train_step()?;
            if self.step.is_multiple_of(self.opts.delta) {
                self.checkpoint_and_leap(leap, on_event)?;
            }
        }
        Ok(())
    }

    fn checkpoint_and_leap(
        &mut self,
        leap: Option<&LeapConfig>,
        on_event: &mut dyn FnMut(&LeapEvent) -> Result<()>,
    ) -> Result<()> {
        loop {
            self.record_checkpoint()?;
            let Some(cfg) = leap else { return Ok(()) };
            match self.leap_or_continue(cfg)? {
                Some(ev) => {
                    on_event(&ev)?;
                    // a leap that lands on a boundary gets its checkpoint immediately
                    if !(ev.applied && self.step.is_multiple_of(self.opts.delta) && self.step < self.opts.total_steps) {
                        return Ok(());
                    }
                }
                None => return Ok(()),
            }
        }
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            seed: self.opts.seed,
            checkpoints: self.checkpoints,
            similarities: self.similarities,
            train_losses: self.train_losses,
            final_theta: self.theta,
            final_step: self.step,
            skipped_steps: self.skipped_steps,
            events: self.events,
        }
    }
}

/// One stage of a cascade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeStage {
    pub stage: u32,
    /// Loss the stage is verified against: L_t for stage 1, the previous
    /// stage's L̂ afterwards.
    pub l_ref: f64,
    #[serde(with = "crate::serde_f64")]
    pub l_hat: f64,
    #[serde(with = "crate::serde_f64")]
    pub displacement_norm: f64,
    pub decision: Decision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeOutcome {
    pub config: CascadeConfig,
    pub predictor: PredictorId,
    pub criterion: Criterion,
    pub start_step: u64,
    pub stages: Vec<CascadeStage>,
    pub accepted_depth: u32,
}

/// Chains `depth` predictions of horizon `K` from a stable checkpoint,
/// stopping at the first stage rejected under `criterion`.
///
/// Stage 1 reads the real Δ-spaced history. Later stages extrapolate the
/// sequence of predicted states, which are spaced `K` apart; when `K == Δ`
/// the real history is part of that sequence too. A quadratic stage that
/// finds only two `K`-spaced states falls back to the line through them.
/// Momentum stages reuse the starting checkpoint's moments.
pub fn run_cascade(
    ctx: &SpeculationContext<'_>,
    window: &HistoryWindow,
    loss_log: &[f64],
    cfg: CascadeConfig,
    predictor: PredictorId,
    criterion: Criterion,
    verify: &VerifyParams,
) -> Result<CascadeOutcome> {
    cfg.validate()?;
    let start = window
        .current()
        .ok_or_else(|| Error::Ineligible("cascade needs a starting checkpoint".into()))?
        .clone();
    if start.regime != RegimeLabel::Stable {
        return Err(Error::Ineligible(format!(
            "cascades start from stable checkpoints only (step {} is {})",
            start.step, start.regime
        )));
    }
    let sigma = verify.sigma(loss_log);
    let first = predict_from_window(ctx, window, predictor, cfg.k)?;

    let mut chain: Vec<ParamVector> = if cfg.k == window.delta() {
        (0..window.len()).rev().map(|i| window.back(i).unwrap().theta.clone()).collect()
    } else {
        vec![start.theta.clone()]
    };
    let mut stages = Vec::with_capacity(cfg.depth as usize);
    let mut l_ref = start.val_loss;
    let mut accepted = 0;
    let mut prediction = first;
    for stage in 1..=cfg.depth {
        if stage > 1 {
            prediction = next_stage(ctx, &start, &chain, predictor, cfg.k)?;
        }
        let l_hat = if prediction.finite {
            ctx.task.validation_loss(&prediction.theta_hat)
        } else {
            f64::NAN
        };
        let decision = decide(l_hat, l_ref, sigma, verify.epsilon)?;
        let pass = decision.passes(criterion);
        stages.push(CascadeStage {
            stage,
            l_ref,
            l_hat,
            displacement_norm: prediction.displacement_norm,
            decision,
        });
        if !pass {
            break;
        }
        accepted = stage;
        l_ref = l_hat;
        chain.push(prediction.theta_hat.clone());
    }
    Ok(CascadeOutcome {
        config: cfg,
        predictor,
        criterion,
        start_step: start.step,
        stages,
        accepted_depth: accepted,
    })
}

fn next_stage(
    ctx: &SpeculationContext<'_>,
    start: &Checkpoint,
    chain: &[ParamVector],
    predictor: PredictorId,
    k: u64,
) -> Result<Prediction> {
    let n = chain.len();
    let last = &chain[n - 1];
    let relabel = |mut p: Prediction| {
        p.predictor = predictor;
        p
    };
    match predictor {
        PredictorId::Momentum => momentum(ctx, start, last, k),
        PredictorId::Quadratic if n >= 3 => predict_quadratic(last, &chain[n - 2], &chain[n - 3], k, k),
        PredictorId::QuadraticExact if n >= 3 => {
            predict_quadratic_exact(last, &chain[n - 2], &chain[n - 3], k, k)
        }
        _ => predict_linear(last, &chain[n - 2], k, k).map(relabel),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{QuadBowl, QuadBowlParams};

    fn bowl(noise: f64) -> QuadBowl {
        QuadBowl::new(QuadBowlParams {
            dim: 8,
            noise_std: noise,
            ..Default::default()
        })
    }

    fn opts(total: u64) -> TrainerOptions {
        TrainerOptions {
            seed: 7,
            delta: 50,
            total_steps: total,
            hyper: AdamHyper {
                lr: 0.05,
                total_steps: total,
                ..Default::default()
            },
            thresholds: Some(Thresholds::new(-0.5, 0.0).unwrap()),
            momentum_variant: MomentumVariant::Paper,
        }
    }

    fn leap(k: u64, criterion: Criterion) -> LeapConfig {
        LeapConfig {
            predictor: PredictorId::Linear,
            k,
            criterion,
            gating: true,
            ff_policy: FastForwardPolicy::Carry,
            force_reject: false,
            verify: VerifyParams {
                epsilon: 0.05,
                loss_window: 5,
            },
        }
    }

    #[test]
    fn cascade_defaults() {
        let d = CascadeConfig::defaults();
        assert_eq!(
            d.iter().map(|c| (c.depth, c.k)).collect::<Vec<_>>(),
            vec![(4, 25), (2, 50), (10, 10)]
        );
        assert_eq!(d[2].total_advance(), 100);
    }

    #[test]
    fn plain_run_checkpoints_every_delta() {
        let task = bowl(0.1);
        let mut t = Trainer::new(&task, opts(500));
        t.run(None, &mut |_| Ok(())).unwrap();
        let out = t.finish();
        let steps: Vec<u64> = out.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, (1..=10).map(|i| 50 * i).collect::<Vec<_>>());
        assert_eq!(out.train_losses.len(), 500);
        assert_eq!(out.checkpoints[0].regime, RegimeLabel::Unknown);
        assert!(out.checkpoints[1..].iter().all(|c| c.regime != RegimeLabel::Unknown));
        assert!(out.similarities[0].is_none());
    }

    #[test]
    fn linear_window_of_one_is_ineligible() {
        let task = bowl(0.0);
        let mut t = Trainer::new(&task, opts(500));
        for _ in 0..50 {
            t.train_step().unwrap();
        }
        t.record_checkpoint().unwrap();
        let h = AdamHyper::default();
        let ctx = SpeculationContext {
            task: &task,
            hyper: &h,
            momentum_variant: MomentumVariant::Paper,
        };
        assert!(matches!(
            speculate(&ctx, t.window(), PredictorId::Linear, 5),
            Err(Error::InsufficientHistory { needed: 2, available: 1 })
        ));
        let mom = speculate(&ctx, t.window(), PredictorId::Momentum, 5).unwrap();
        assert!(mom.prediction.finite);
        assert!(mom.prediction.displacement_norm > 0.0);
    }

    #[test]
    fn checkpoint_off_boundary_is_rejected() {
        let task = bowl(0.0);
        let mut t = Trainer::new(&task, opts(500));
        t.train_step().unwrap();
        assert!(t.record_checkpoint().is_err());
    }

    #[test]
    fn rejection_leaves_state_untouched() {
        let task = bowl(0.1);
        let mut t = Trainer::new(&task, opts(1000));
        for _ in 0..3 {
            for _ in 0..50 {
                t.train_step().unwrap();
            }
            t.record_checkpoint().unwrap();
        }
        let theta = t.theta().clone();
        let opt = t.optimizer().clone();
        let losses = t.val_losses().to_vec();
        let steps = t.window().steps();
        let mut cfg = leap(10, Criterion::Proximity);
        cfg.force_reject = true;
        let ev = t.leap_or_continue(&cfg).unwrap().expect("speculation attempted");
        assert!(!ev.applied);
        assert_eq!(t.theta(), &theta);
        assert_eq!(t.optimizer(), &opt);
        assert_eq!(t.val_losses(), &losses[..]);
        assert_eq!(t.window().steps(), steps);
        assert_eq!(t.step(), 150);
        assert_eq!(t.skipped_steps(), 0);
    }

    #[test]
    fn accepted_leap_fast_forwards() {
        let task = bowl(0.0);
        let mut t = Trainer::new(&task, opts(1000));
        for _ in 0..10 {
            for _ in 0..50 {
                t.train_step().unwrap();
            }
            t.record_checkpoint().unwrap();
        }
        let moments = t.optimizer().snapshot_moments();
        let opt_step = t.optimizer().step();
        // a descending bowl: linear extrapolation keeps improving
        let ev = t.leap_or_continue(&leap(50, Criterion::Strict)).unwrap().unwrap();
        assert!(ev.applied, "{ev:?}");
        assert_eq!(ev.step_from, 500);
        assert_eq!(t.step(), 550);
        assert_eq!(t.skipped_steps(), 50);
        assert_eq!(t.optimizer().snapshot_moments(), moments);
        assert_eq!(t.optimizer().step(), opt_step + 50);
        assert!(t.window().is_empty());
        // the next update consumes the batch for step 550
        t.train_step().unwrap();
        assert_eq!(t.step(), 551);
    }

    #[test]
    fn leaps_never_fire_from_gated_regimes() {
        let task = bowl(0.1);
        let mut o = opts(1000);
        // every similarity lands below tau_low
        o.thresholds = Some(Thresholds::new(0.999999, 1.0).unwrap());
        let mut t = Trainer::new(&task, o);
        t.run(Some(&leap(5, Criterion::Proximity)), &mut |_| Ok(())).unwrap();
        assert!(t.events().is_empty());
        assert_eq!(t.skipped_steps(), 0);
    }

    #[test]
    fn ledger_matches_applied_events() {
        let task = bowl(0.0);
        let mut t = Trainer::new(&task, opts(2000));
        let mut seen = Vec::new();
        t.run(Some(&leap(25, Criterion::Proximity)), &mut |e| {
            seen.push(e.clone());
            Ok(())
        })
        .unwrap();
        let out = t.finish();
        assert_eq!(seen, out.events);
        let applied: u64 = out.events.iter().filter(|e| e.applied).map(|e| e.k).sum();
        assert!(applied > 0);
        assert_eq!(out.skipped_steps, applied);
        assert_eq!(out.final_step, 2000);
        for e in out.events.iter().filter(|e| e.applied) {
            assert!(e.regime_at_leap.is_favorable());
            assert!(e.decision.passes(Criterion::Proximity));
        }
        // after a leap checkpoints realign to multiples of delta
        assert!(out.checkpoints.iter().all(|c| c.step % 50 == 0));
    }

    fn stable_window(task: &QuadBowl) -> (HistoryWindow, Vec<f64>) {
        let mut t = Trainer::new(task, opts(2000));
        for _ in 0..6 {
            for _ in 0..50 {
                t.train_step().unwrap();
            }
            t.record_checkpoint().unwrap();
        }
        let mut w = HistoryWindow::new(50);
        for i in (0..3).rev() {
            let c = t.window().back(i).unwrap();
            w.push(Arc::new((**c).clone().with_regime(RegimeLabel::Stable))).unwrap();
        }
        (w, t.val_losses().to_vec())
    }

    #[test]
    fn depth_one_cascade_equals_single_speculation() {
        let task = bowl(0.0);
        let (w, losses) = stable_window(&task);
        let h = AdamHyper::default();
        let ctx = SpeculationContext {
            task: &task,
            hyper: &h,
            momentum_variant: MomentumVariant::Paper,
        };
        let vp = VerifyParams {
            epsilon: 0.05,
            loss_window: 5,
        };
        let cfg = CascadeConfig { depth: 1, k: 25 };
        for p in [PredictorId::Momentum, PredictorId::Linear, PredictorId::Quadratic] {
            let c = run_cascade(&ctx, &w, &losses, cfg, p, Criterion::Proximity, &vp).unwrap();
            let (spec, d) = evaluate(&ctx, &w, &losses, p, 25, &vp).unwrap();
            assert_eq!(c.stages.len(), 1);
            assert_eq!(c.stages[0].decision, d);
            assert_eq!(c.stages[0].l_hat.to_bits(), spec.l_hat.to_bits());
            assert_eq!(c.accepted_depth, u32::from(d.proximity));
        }
    }

    #[test]
    fn linear_cascade_matches_one_long_leap() {
        let task = bowl(0.0);
        let (w, losses) = stable_window(&task);
        let h = AdamHyper::default();
        let ctx = SpeculationContext {
            task: &task,
            hyper: &h,
            momentum_variant: MomentumVariant::Paper,
        };
        let vp = VerifyParams {
            epsilon: 0.9,
            loss_window: 5,
        };
        let c = run_cascade(&ctx, &w, &losses, CascadeConfig { depth: 2, k: 10 }, PredictorId::Linear, Criterion::Adaptive, &vp)
            .unwrap();
        assert_eq!(c.accepted_depth, 2, "{c:?}");
        let long = speculate(&ctx, &w, PredictorId::Linear, 20).unwrap();
        assert!((c.stages[1].l_hat - long.l_hat).abs() < 1e-9 * long.l_hat.abs().max(1.0));
    }

    #[test]
    fn cascade_needs_stable_start() {
        let task = bowl(0.0);
        let (w, losses) = stable_window(&task);
        let mut w2 = HistoryWindow::new(50);
        for i in (0..3).rev() {
            let c = w.back(i).unwrap();
            w2.push(Arc::new((**c).clone().with_regime(RegimeLabel::Transition))).unwrap();
        }
        let h = AdamHyper::default();
        let ctx = SpeculationContext {
            task: &task,
            hyper: &h,
            momentum_variant: MomentumVariant::Paper,
        };
        let vp = VerifyParams {
            epsilon: 0.05,
            loss_window: 5,
        };
        let r = run_cascade(&ctx, &w2, &losses, CascadeConfig { depth: 2, k: 50 }, PredictorId::Linear, Criterion::Strict, &vp);
        assert!(matches!(r, Err(Error::Ineligible(_))));
    }

    #[test]
    fn stage_one_rejection_gives_depth_zero() {
        let task = bowl(0.0);
        let (w, losses) = stable_window(&task);
        let h = AdamHyper::default();
        let ctx = SpeculationContext {
            task: &task,
            hyper: &h,
            momentum_variant: MomentumVariant::Paper,
        };
        let vp = VerifyParams {
            epsilon: 0.05,
            loss_window: 5,
        };
        // K·m/√v moves every coordinate by ~K: far outside the bowl's basin
        let c = run_cascade(&ctx, &w, &losses, CascadeConfig { depth: 4, k: 25 }, PredictorId::Momentum, Criterion::Strict, &vp)
            .unwrap();
        assert_eq!(c.accepted_depth, 0);
        assert_eq!(c.stages.len(), 1);
    }
}
