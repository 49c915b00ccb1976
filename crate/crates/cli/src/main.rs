//! `leapverify`: calibrate, train, sweep, cascade, live leaps, and reports.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use leapverify::config::{QuadVariant, RunConfig};
use leapverify::engine::{LeapConfig, LeapEvent, Trainer, VerifyParams};
use leapverify::harness::{self, SeedResult};
use leapverify::optim::FastForwardPolicy;
use leapverify::predict::MomentumVariant;
use leapverify::regime::Thresholds;
use leapverify::tasks::TaskConfig;
use leapverify::verify::Criterion;
use leapverify::write_atomic;
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "leapverify", version, about = "Speculative training experiments: predict ahead, verify, leap")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate regime thresholds from short training runs.
    Calibrate(Common),
    /// Pass 1: train every seed and write checkpoints.
    Train(Common),
    /// Pass 2: K-sweep over trained runs.
    Sweep(Common),
    /// Pass 3: cascades from stable checkpoints.
    Cascade(Common),
    /// Train with live leaps applied on acceptance.
    Live(Common),
    /// Aggregate sweep and cascade results into a report.
    Report(Common),
    /// Calibration, passes 1 to 3 and the report in one go.
    RunAll(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in task with default parameters: quad-bowl, mlp-reg, char-seq.
    #[arg(long)]
    task: Option<String>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Training steps per run.
    #[arg(long)]
    steps: Option<u64>,
    /// Checkpoint spacing.
    #[arg(long)]
    delta: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    k_set: Option<Vec<u64>>,
    /// Proximity tolerance as a fraction of the current loss.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Criterion that gates live leaps: strict, adaptive, proximity.
    #[arg(long)]
    criterion: Option<Criterion>,
    /// paper or descent.
    #[arg(long)]
    momentum_variant: Option<MomentumVariant>,
    /// paper, exact or both.
    #[arg(long)]
    quad_variant: Option<QuadVariant>,
    /// carry or decay.
    #[arg(long)]
    ff_policy: Option<FastForwardPolicy>,
    #[arg(long, requires = "tau_high", allow_hyphen_values = true)]
    tau_low: Option<f64>,
    #[arg(long, requires = "tau_low", allow_hyphen_values = true)]
    tau_high: Option<f64>,
    /// Output root.
    #[arg(long, env = "LEAPVERIFY_OUT")]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(t) = &self.task {
            cfg.task = TaskConfig::from_name(t)?;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(s) = self.steps {
            cfg.total_steps = s;
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        if let Some(k) = &self.k_set {
            cfg.k_set = k.clone();
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(c) = self.criterion {
            cfg.criterion = c;
        }
        if let Some(m) = self.momentum_variant {
            cfg.momentum_variant = m;
        }
        if let Some(q) = self.quad_variant {
            cfg.quad_variant = q;
        }
        if let Some(f) = self.ff_policy {
            cfg.ff_policy = f;
        }
        if let (Some(lo), Some(hi)) = (self.tau_low, self.tau_high) {
            cfg.thresholds = Some(Thresholds::new(lo, hi)?);
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Calibrate(c)
        | Command::Train(c)
        | Command::Sweep(c)
        | Command::Cascade(c)
        | Command::Live(c)
        | Command::Report(c)
        | Command::RunAll(c) => c,
    };
    if let Some(n) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    let cfg = common.effective_config()?;
    match &cli.command {
        Command::Calibrate(c) => calibrate(&cfg, c.force),
        Command::Train(c) => train(&cfg, c.force),
        Command::Sweep(c) => sweep(&cfg, c.force),
        Command::Cascade(c) => cascade(&cfg, c.force),
        Command::Live(c) => live(&cfg, c.force),
        Command::Report(_) => report(&cfg),
        Command::RunAll(c) => run_all(&cfg, c.force),
    }
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} already exists; pass --force to overwrite", path.display());
    }
    Ok(())
}

fn write_config(cfg: &RunConfig) -> Result<()> {
    write_atomic(&cfg.out.join(harness::CONFIG_FILE), cfg.to_toml_string()?.as_bytes())?;
    Ok(())
}

/// Thresholds from the configuration or flags, else a previous calibration.
fn stored_thresholds(cfg: &RunConfig) -> Result<Option<Thresholds>> {
    if let Some(th) = cfg.thresholds {
        return Ok(Some(th));
    }
    let p = cfg.out.join(harness::THRESHOLDS_FILE);
    if p.exists() {
        let th: Thresholds = harness::read_json(&p)?;
        th.validate()?;
        return Ok(Some(th));
    }
    Ok(None)
}

fn calibrated(cfg: &RunConfig) -> Result<Thresholds> {
    let task = cfg.task.build()?;
    let th = harness::calibration_thresholds(task.as_ref(), cfg)?;
    println!(
        "calibrated on seeds {:?} ({} steps): tau_low = {:.6}, tau_high = {:.6}",
        cfg.calibration_seeds(),
        cfg.calibration_steps(),
        th.tau_low,
        th.tau_high
    );
    Ok(th)
}

fn calibrate(cfg: &RunConfig, force: bool) -> Result<()> {
    let path = cfg.out.join(harness::THRESHOLDS_FILE);
    refuse_existing(&path, force)?;
    let th = match cfg.thresholds {
        Some(th) => th,
        None => calibrated(cfg)?,
    };
    harness::write_json(&path, &th)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn train(cfg: &RunConfig, force: bool) -> Result<()> {
    for &s in &cfg.seeds {
        refuse_existing(&harness::seed_dir(cfg, &cfg.out, s), force)?;
    }
    let th = match stored_thresholds(cfg)? {
        Some(th) => th,
        None => {
            let th = calibrated(cfg)?;
            harness::write_json(&cfg.out.join(harness::THRESHOLDS_FILE), &th)?;
            th
        }
    };
    let task = cfg.task.build()?;
    cfg.seeds.par_iter().try_for_each(|&s| -> Result<()> {
        let run = harness::pass1_train(task.as_ref(), s, cfg, Some(&th))?;
        let dir = harness::seed_dir(cfg, &cfg.out, s);
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        harness::persist_run(&dir, &run).with_context(|| format!("writing seed {s}"))?;
        println!(
            "seed {s}: {} checkpoints, final validation loss {:.6}",
            run.checkpoints.len(),
            run.checkpoints.last().map_or(f64::NAN, |c| c.val_loss)
        );
        Ok(())
    })?;
    write_config(cfg)
}

fn sweep(cfg: &RunConfig, force: bool) -> Result<()> {
    let task = cfg.task.build()?;
    cfg.seeds.par_iter().try_for_each(|&s| -> Result<()> {
        let dir = harness::seed_dir(cfg, &cfg.out, s);
        let path = dir.join(harness::SWEEP_FILE);
        refuse_existing(&path, force)?;
        let ckpts = harness::load_checkpoints(&dir).with_context(|| format!("seed {s}: run `train` first"))?;
        let cells = harness::pass2_ksweep(task.as_ref(), &ckpts, cfg)?;
        harness::write_sweep_csv(&path, &cells)?;
        println!("seed {s}: {} sweep cells -> {}", cells.len(), path.display());
        Ok(())
    })
}

fn cascade(cfg: &RunConfig, force: bool) -> Result<()> {
    let task = cfg.task.build()?;
    cfg.seeds.par_iter().try_for_each(|&s| -> Result<()> {
        let dir = harness::seed_dir(cfg, &cfg.out, s);
        let path = dir.join(harness::CASCADE_FILE);
        refuse_existing(&path, force)?;
        let ckpts = harness::load_checkpoints(&dir).with_context(|| format!("seed {s}: run `train` first"))?;
        let table = harness::pass3_cascades(task.as_ref(), &ckpts, cfg)?;
        harness::write_json(&path, &table)?;
        if table.is_empty() {
            println!("seed {s}: no stable checkpoints, empty cascade table");
        } else {
            println!("seed {s}: {} cascades from {} stable checkpoints", table.records.len(), table.stable_checkpoints);
        }
        Ok(())
    })
}

fn live(cfg: &RunConfig, force: bool) -> Result<()> {
    let th = stored_thresholds(cfg)?;
    if th.is_none() && cfg.live.gating {
        bail!("live leaps with gating need thresholds: run `calibrate` or pass --tau-low/--tau-high");
    }
    let task = cfg.task.build()?;
    let leap = LeapConfig {
        predictor: cfg.live.predictor,
        k: cfg.live.k,
        criterion: cfg.criterion,
        gating: cfg.live.gating,
        ff_policy: cfg.ff_policy,
        force_reject: false,
        verify: VerifyParams {
            epsilon: cfg.epsilon,
            loss_window: cfg.loss_window,
        },
    };
    let live_dir = |s: u64| cfg.out.join("live").join(cfg.task.name()).join(s.to_string());
    for &s in &cfg.seeds {
        refuse_existing(&live_dir(s), force)?;
    }
    cfg.seeds.par_iter().try_for_each(|&s| -> Result<()> {
        let dir = live_dir(s);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let log = dir.join("events.jsonl");
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&log)
            .with_context(|| format!("opening {}", log.display()))?;
        let mut trainer = Trainer::new(task.as_ref(), harness::trainer_options(cfg, s, th.as_ref())?);
        trainer.run(Some(&leap), &mut |e: &LeapEvent| {
            let mut line = serde_json::to_vec(e)?;
            line.push(b'\n');
            file.write_all(&line).map_err(|source| leapverify::Error::Io {
                path: log.clone(),
                source,
            })
        })?;
        let out = trainer.finish();
        let applied = out.events.iter().filter(|e| e.applied).count();
        println!(
            "seed {s}: {} speculations, {applied} leaps, {} of {} steps skipped, final validation loss {:.6}",
            out.events.len(),
            out.skipped_steps,
            out.final_step,
            out.checkpoints.last().map_or(f64::NAN, |c| c.val_loss)
        );
        Ok(())
    })?;
    write_config(cfg)
}

fn report(cfg: &RunConfig) -> Result<()> {
    let seeds = cfg
        .seeds
        .iter()
        .map(|&s| {
            let dir = harness::seed_dir(cfg, &cfg.out, s);
            SeedResult::load(&dir, s).with_context(|| format!("seed {s}: run `train`, `sweep` and `cascade` first"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut r = harness::aggregate(&seeds);
    r.thresholds = stored_thresholds(cfg)?;
    r.config = Some(cfg.clone());
    harness::write_json(&cfg.out.join(harness::REPORT_JSON), &r)?;
    let text = harness::render_text(&r);
    write_atomic(&cfg.out.join(harness::REPORT_TEXT), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn run_all(cfg: &RunConfig, force: bool) -> Result<()> {
    refuse_existing(&cfg.out.join(harness::REPORT_JSON), force)?;
    for &s in &cfg.seeds {
        refuse_existing(&harness::seed_dir(cfg, &cfg.out, s), force)?;
    }
    for &s in &cfg.seeds {
        let dir = harness::seed_dir(cfg, &cfg.out, s);
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
    }
    let exp = harness::run_experiment(cfg, Some(&cfg.out))?;
    print!("{}", harness::render_text(&exp.report));
    println!("results in {}", cfg.out.display());
    Ok(())
}
