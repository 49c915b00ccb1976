//! The multi-seed protocol.
//!
//! Pass 1 trains each seed with Δ-spaced checkpoints, pass 2 sweeps every
//! predictor and horizon over the non-chaotic checkpoints, pass 3 runs cascades
//! from the stable ones, and [`aggregate`] reduces the per-seed tables into an
//! [`ExperimentReport`]. Sweeps and cascades are offline: nothing is applied
//! to the recorded runs.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{
    aggregate, coefficient_of_variation, loss_ratio_table, render_text, CascadeSummary,
    ExperimentReport, MeanStd, RateRow, RatioRow, RatioTable, RegimeBreakdown, RegimeScope,
    SeedRate, SeedRegimes,
};

use crate::config::RunConfig;
use crate::engine::{run_cascade, evaluate, CascadeOutcome, SpeculationContext, TrainOutcome, Trainer, TrainerOptions, VerifyParams};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::predict::PredictorId;
use crate::regime::{calibrate, classify, RegimeLabel, Thresholds};
use crate::tasks::Task;
use crate::trajectory::{checkpoint_path, list_checkpoints, load_checkpoint, run_dir, save_checkpoint, Checkpoint, HistoryWindow};
use crate::verify::Criterion;

pub const REGIME_FILE: &str = "regimes.csv";
pub const LOSS_FILE: &str = "losses.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const CASCADE_FILE: &str = "cascades.json";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

/// One row of a run's regime log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub step: u64,
    pub similarity: Option<f64>,
    pub val_loss: f64,
    pub regime: RegimeLabel,
}

pub fn trainer_options(cfg: &RunConfig, seed: u64, thresholds: Option<&Thresholds>) -> Result<TrainerOptions> {
    Ok(TrainerOptions {
        seed,
        delta: cfg.delta,
        total_steps: cfg.total_steps,
        hyper: cfg.hyper()?,
        thresholds: thresholds.copied(),
        momentum_variant: cfg.momentum_variant,
    })
}

/// Pass 1: a plain training run. Checkpoints stay `unknown` when no
/// thresholds are given; see [`label_run`].
pub fn pass1_train(task: &dyn Task, seed: u64, cfg: &RunConfig, thresholds: Option<&Thresholds>) -> Result<TrainOutcome> {
    let run = || {
        let mut t = Trainer::new(task, trainer_options(cfg, seed, thresholds)?);
        t.run(None, &mut |_| Ok(()))?;
        Ok(t.finish())
    };
    run().map_err(|e: Error| e.in_pass("pass 1 (train)", seed))
}

/// Relabels every checkpoint from its recorded similarity.
pub fn label_run(outcome: &mut TrainOutcome, th: &Thresholds) {
    for (c, s) in outcome.checkpoints.iter_mut().zip(&outcome.similarities) {
        let label = s.map_or(RegimeLabel::Unknown, |s| classify(s, th));
        if c.regime != label {
            Arc::make_mut(c).regime = label;
        }
    }
}

pub fn regime_rows(outcome: &TrainOutcome) -> Vec<RegimeRow> {
    outcome
        .checkpoints
        .iter()
        .zip(&outcome.similarities)
        .map(|(c, s)| RegimeRow {
            step: c.step,
            similarity: *s,
            val_loss: c.val_loss,
            regime: c.regime,
        })
        .collect()
}

/// Recomputes regime rows from checkpoints loaded off disk.
pub fn regime_rows_from_checkpoints(ckpts: &[Arc<Checkpoint>], delta: u64) -> Result<Vec<RegimeRow>> {
    let mut rows = Vec::with_capacity(ckpts.len());
    for (i, c) in ckpts.iter().enumerate() {
        let similarity = match i.checked_sub(1).map(|j| &ckpts[j]) {
            Some(p) if p.step + delta == c.step => {
                Some(crate::param::cosine_similarity(&c.fingerprint, &p.fingerprint)?)
            }
            _ => None,
        };
        rows.push(RegimeRow {
            step: c.step,
            similarity,
            val_loss: c.val_loss,
            regime: c.regime,
        });
    }
    Ok(rows)
}

/// Similarities available in a run, in step order.
pub fn similarity_trace(outcome: &TrainOutcome) -> Vec<f64> {
    outcome.similarities.iter().flatten().copied().collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[derive(Serialize, Deserialize)]
struct LossRow {
    step: u64,
    train_loss: f64,
}

/// Writes checkpoints, the regime log and the training-loss log into `dir`.
pub fn persist_run(dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for c in &outcome.checkpoints {
        save_checkpoint(&checkpoint_path(dir, c.step), c)?;
    }
    write_csv(&dir.join(REGIME_FILE), &regime_rows(outcome))?;
    let losses: Vec<LossRow> = outcome
        .train_losses
        .iter()
        .enumerate()
        .map(|(i, &l)| LossRow {
            step: i as u64,
            train_loss: l,
        })
        .collect();
    write_csv(&dir.join(LOSS_FILE), &losses)
}

pub fn load_checkpoints(dir: &Path) -> Result<Vec<Arc<Checkpoint>>> {
    let listed = list_checkpoints(dir)?;
    if listed.is_empty() {
        return Err(Error::MissingCheckpoints(format!("no checkpoints in {}", dir.display())));
    }
    listed.iter().map(|(_, p)| load_checkpoint(p).map(Arc::new)).collect()
}

pub fn read_regimes(dir: &Path) -> Result<Vec<RegimeRow>> {
    read_csv(&dir.join(REGIME_FILE))
}

/// Short training runs on the calibration seeds, then per-trace quantiles
/// averaged across seeds.
pub fn calibration_thresholds(task: &dyn Task, cfg: &RunConfig) -> Result<Thresholds> {
    let mut c = cfg.clone();
    c.total_steps = cfg.calibration_steps();
    let traces = cfg
        .calibration_seeds()
        .par_iter()
        .map(|&s| pass1_train(task, s, &c, None).map(|o| similarity_trace(&o)))
        .collect::<Result<Vec<_>>>()?;
    calibrate(&traces, cfg.calibration.quantiles)
}

/// The longest run of exactly Δ-spaced checkpoints ending at index `i`,
/// capped at three.
pub fn history_window(ckpts: &[Arc<Checkpoint>], i: usize, delta: u64) -> HistoryWindow {
    let mut start = i;
    while start > 0 && i - start < 2 && ckpts[start - 1].step + delta == ckpts[start].step {
        start -= 1;
    }
    HistoryWindow::from_checkpoints(delta, ckpts[start..=i].iter().cloned())
        .expect("spacing checked above")
}

/// One (checkpoint, predictor, K) evaluation of the K-sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub seed: u64,
    pub step: u64,
    pub regime: RegimeLabel,
    pub predictor: PredictorId,
    #[serde(rename = "K")]
    pub k: u64,
    #[serde(rename = "L_hat")]
    pub l_hat: f64,
    #[serde(rename = "L_t")]
    pub l_t: f64,
    pub strict: Option<bool>,
    pub adaptive: Option<bool>,
    pub proximity: Option<bool>,
    pub displacement_norm: f64,
    pub eligible: bool,
}

impl SweepCell {
    /// `None` for ineligible cells and criteria that could not be evaluated.
    pub fn verdict(&self, c: Criterion) -> Option<bool> {
        match c {
            Criterion::Strict => self.strict,
            Criterion::Adaptive => self.adaptive,
            Criterion::Proximity => self.proximity,
        }
    }
}

fn swept(label: RegimeLabel) -> bool {
    matches!(label, RegimeLabel::Transition | RegimeLabel::Stable)
}

/// Pass 2: every predictor at every K from every transition or stable
/// checkpoint. Checkpoints without enough history for a predictor yield
/// ineligible cells.
pub fn pass2_ksweep(task: &dyn Task, ckpts: &[Arc<Checkpoint>], cfg: &RunConfig) -> Result<Vec<SweepCell>> {
    let Some(first) = ckpts.first() else {
        return Err(Error::MissingCheckpoints("K-sweep needs a completed training pass".into()));
    };
    let seed = first.seed;
    let hyper = cfg.hyper()?;
    let ctx = SpeculationContext {
        task,
        hyper: &hyper,
        momentum_variant: cfg.momentum_variant,
    };
    let vp = VerifyParams {
        epsilon: cfg.epsilon,
        loss_window: cfg.loss_window,
    };
    let losses: Vec<f64> = ckpts.iter().map(|c| c.val_loss).collect();
    let predictors = cfg.predictors();
    let per_ckpt = (0..ckpts.len())
        .into_par_iter()
        .filter(|&i| swept(ckpts[i].regime))
        .map(|i| {
            let c = &ckpts[i];
            let window = history_window(ckpts, i, cfg.delta);
            let mut cells = Vec::with_capacity(predictors.len() * cfg.k_set.len());
            for &p in &predictors {
                for &k in &cfg.k_set {
                    let cell = match evaluate(&ctx, &window, &losses[..=i], p, k, &vp) {
                        Ok((spec, d)) => SweepCell {
                            seed,
                            step: c.step,
                            regime: c.regime,
                            predictor: p,
                            k,
                            l_hat: spec.l_hat,
                            l_t: c.val_loss,
                            strict: Some(d.strict),
                            adaptive: d.adaptive,
                            proximity: Some(d.proximity),
                            displacement_norm: spec.prediction.displacement_norm,
                            eligible: true,
                        },
                        Err(Error::InsufficientHistory { .. }) => SweepCell {
                            seed,
                            step: c.step,
                            regime: c.regime,
                            predictor: p,
                            k,
                            l_hat: f64::NAN,
                            l_t: c.val_loss,
                            strict: None,
                            adaptive: None,
                            proximity: None,
                            displacement_norm: f64::NAN,
                            eligible: false,
                        },
                        Err(e) => return Err(e),
                    };
                    cells.push(cell);
                }
            }
            Ok(cells)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_pass("pass 2 (K-sweep)", seed))?;
    Ok(per_ckpt.into_iter().flatten().collect())
}

pub fn write_sweep_csv(path: &Path, cells: &[SweepCell]) -> Result<()> {
    write_csv(path, cells)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepCell>> {
    read_csv(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeRecord {
    pub seed: u64,
    pub step: u64,
    pub outcome: CascadeOutcome,
}

/// Pass 3 output for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeTable {
    pub seed: u64,
    pub stable_checkpoints: usize,
    /// (checkpoint, config, predictor) combinations skipped for lack of history.
    pub ineligible: usize,
    pub records: Vec<CascadeRecord>,
}

impl CascadeTable {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Pass 3: every cascade configuration, predictor and criterion from every
/// stable checkpoint. A run without stable checkpoints gives an empty table.
pub fn pass3_cascades(task: &dyn Task, ckpts: &[Arc<Checkpoint>], cfg: &RunConfig) -> Result<CascadeTable> {
    let seed = ckpts.first().map_or(0, |c| c.seed);
    let hyper = cfg.hyper()?;
    let ctx = SpeculationContext {
        task,
        hyper: &hyper,
        momentum_variant: cfg.momentum_variant,
    };
    let vp = VerifyParams {
        epsilon: cfg.epsilon,
        loss_window: cfg.loss_window,
    };
    let losses: Vec<f64> = ckpts.iter().map(|c| c.val_loss).collect();
    let predictors = cfg.predictors();
    let stable: Vec<usize> = (0..ckpts.len()).filter(|&i| ckpts[i].regime == RegimeLabel::Stable).collect();
    let per_ckpt = stable
        .par_iter()
        .map(|&i| {
            let window = history_window(ckpts, i, cfg.delta);
            let mut records = Vec::new();
            let mut ineligible = 0;
            for &cc in &cfg.cascades {
                for &p in &predictors {
                    if window.len() < p.history_needed() {
                        ineligible += 1;
                        continue;
                    }
                    for c in Criterion::ALL {
                        let outcome = run_cascade(&ctx, &window, &losses[..=i], cc, p, c, &vp)?;
                        records.push(CascadeRecord {
                            seed,
                            step: ckpts[i].step,
                            outcome,
                        });
                    }
                }
            }
            Ok((records, ineligible))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_pass("pass 3 (cascades)", seed))?;
    let mut table = CascadeTable {
        seed,
        stable_checkpoints: stable.len(),
        ineligible: 0,
        records: Vec::new(),
    };
    for (r, n) in per_ckpt {
        table.records.extend(r);
        table.ineligible += n;
    }
    Ok(table)
}

/// Everything aggregation needs from one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub regimes: Vec<RegimeRow>,
    pub cells: Vec<SweepCell>,
    pub cascades: CascadeTable,
}

impl SeedResult {
    /// Reads a run directory written by [`run_experiment`] or the CLI passes.
    pub fn load(dir: &Path, seed: u64) -> Result<Self> {
        let mut cascades: CascadeTable = read_json(&dir.join(CASCADE_FILE))?;
        cascades.seed = seed;
        Ok(SeedResult {
            seed,
            regimes: read_regimes(dir)?,
            cells: read_sweep_csv(&dir.join(SWEEP_FILE))?,
            cascades,
        })
    }
}

/// Result of the full protocol.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub thresholds: Thresholds,
    pub seeds: Vec<SeedResult>,
    pub report: ExperimentReport,
}

pub fn seed_dir(cfg: &RunConfig, root: &Path, seed: u64) -> PathBuf {
    run_dir(root, cfg.task.name(), seed)
}

/// Runs passes 1 to 3 for every seed and aggregates. Thresholds come from
/// the configuration, or are calibrated; calibration reuses the pass-1 runs
/// when the calibration seeds and length match the experiment's. With an
/// output root, run directories, thresholds, the effective configuration and
/// the report are written there.
pub fn run_experiment(cfg: &RunConfig, out: Option<&Path>) -> Result<Experiment> {
    cfg.validate()?;
    let task = cfg.task.build()?;
    let task = task.as_ref();
    let mut runs = cfg
        .seeds
        .par_iter()
        .map(|&s| pass1_train(task, s, cfg, cfg.thresholds.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let thresholds = match cfg.thresholds {
        Some(th) => th,
        None if cfg.calibration_seeds() == cfg.seeds && cfg.calibration_steps() == cfg.total_steps => {
            let traces: Vec<Vec<f64>> = runs.iter().map(similarity_trace).collect();
            calibrate(&traces, cfg.calibration.quantiles)?
        }
        None => calibration_thresholds(task, cfg)?,
    };
    for r in &mut runs {
        label_run(r, &thresholds);
    }
    let seeds = runs
        .par_iter()
        .map(|run| {
            let cells = pass2_ksweep(task, &run.checkpoints, cfg)?;
            let cascades = pass3_cascades(task, &run.checkpoints, cfg)?;
            let result = SeedResult {
                seed: run.seed,
                regimes: regime_rows(run),
                cells,
                cascades,
            };
            if let Some(root) = out {
                let dir = seed_dir(cfg, root, run.seed);
                persist_run(&dir, run)
                    .and_then(|_| write_sweep_csv(&dir.join(SWEEP_FILE), &result.cells))
                    .and_then(|_| write_json(&dir.join(CASCADE_FILE), &result.cascades))
                    .map_err(|e| e.in_pass("writing results", run.seed))?;
            }
            Ok(result)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = aggregate(&seeds);
    report.thresholds = Some(thresholds);
    report.config = Some(cfg.clone());
    if let Some(root) = out {
        write_outputs(root, cfg, &thresholds, &report)?;
    }
    Ok(Experiment {
        thresholds,
        seeds,
        report,
    })
}

/// Writes the effective configuration, thresholds and both report forms.
pub fn write_outputs(root: &Path, cfg: &RunConfig, th: &Thresholds, report: &ExperimentReport) -> Result<()> {
    write_atomic(&root.join(CONFIG_FILE), cfg.to_toml_string()?.as_bytes())?;
    write_json(&root.join(THRESHOLDS_FILE), th)?;
    write_json(&root.join(REPORT_JSON), report)?;
    write_atomic(&root.join(REPORT_TEXT), render_text(report).as_bytes())
}
