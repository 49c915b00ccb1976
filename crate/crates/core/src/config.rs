//! Run configuration.
//!
//! Stored as TOML. Every field has a default, unknown keys are rejected, and
//! the effective configuration is written next to every set of outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::CascadeConfig;
use crate::error::{Error, Result};
use crate::optim::{AdamHyper, FastForwardPolicy};
use crate::predict::{MomentumVariant, PredictorId};
use crate::regime::{CalibrationQuantiles, Thresholds};
use crate::tasks::TaskConfig;
use crate::trajectory::{DEFAULT_DELTA, DEFAULT_LOSS_WINDOW};
use crate::verify::{Criterion, DEFAULT_EPSILON};

pub const DEFAULT_SEEDS: [u64; 5] = [42, 43, 44, 45, 46];
pub const DEFAULT_K_SET: [u64; 6] = [5, 10, 25, 50, 75, 100];
pub const OUT_ENV: &str = "LEAPVERIFY_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Base learning rate; the task's default when unset.
    pub lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub warmup_steps: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let h = AdamHyper::default();
        OptimizerConfig {
            lr: None,
            beta1: h.beta1,
            beta2: h.beta2,
            weight_decay: h.weight_decay,
            eps: h.eps,
            warmup_steps: h.warmup_steps,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub quantiles: CalibrationQuantiles,
    /// Seeds for `calibrate`; the experiment seeds when unset.
    pub seeds: Option<Vec<u64>>,
    /// Training length for calibration runs; `total_steps` when unset.
    pub steps: Option<u64>,
}

/// Which quadratic predictors the sweep evaluates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadVariant {
    #[default]
    Paper,
    Exact,
    Both,
}

impl std::str::FromStr for QuadVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(QuadVariant::Paper),
            "exact" => Ok(QuadVariant::Exact),
            "both" => Ok(QuadVariant::Both),
            other => Err(Error::Config(format!("unknown quadratic variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveConfig {
    pub predictor: PredictorId,
    pub k: u64,
    /// Only leap from transition or stable checkpoints.
    pub gating: bool,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            predictor: PredictorId::Linear,
            k: 10,
            gating: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub delta: u64,
    pub optimizer: OptimizerConfig,
    /// Fixed thresholds; calibrated from training runs when unset.
    pub thresholds: Option<Thresholds>,
    pub calibration: CalibrationConfig,
    pub k_set: Vec<u64>,
    pub epsilon: f64,
    /// Number of recent validation losses behind σ_L.
    pub loss_window: usize,
    /// Criterion that gates live leaps.
    pub criterion: Criterion,
    pub live: LiveConfig,
    pub cascades: Vec<CascadeConfig>,
    pub momentum_variant: MomentumVariant,
    pub quad_variant: QuadVariant,
    pub ff_policy: FastForwardPolicy,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskConfig::default(),
            seeds: DEFAULT_SEEDS.to_vec(),
            total_steps: 2000,
            delta: DEFAULT_DELTA,
            optimizer: OptimizerConfig::default(),
            thresholds: None,
            calibration: CalibrationConfig::default(),
            k_set: DEFAULT_K_SET.to_vec(),
            epsilon: DEFAULT_EPSILON,
            loss_window: DEFAULT_LOSS_WINDOW,
            criterion: Criterion::Strict,
            live: LiveConfig::default(),
            cascades: CascadeConfig::defaults().to_vec(),
            momentum_variant: MomentumVariant::Paper,
            quad_variant: QuadVariant::Paper,
            ff_policy: FastForwardPolicy::Carry,
            out: default_out(),
        }
    }
}

/// `$LEAPVERIFY_OUT`, or `out` in the working directory.
pub fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn unique<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().all(|(i, x)| !xs[..i].contains(x))
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.task.validate()?;
        if self.seeds.is_empty() || !unique(&self.seeds) {
            return bad("seeds must be a non-empty list without duplicates".into());
        }
        if self.delta == 0 {
            return bad("delta must be >= 1".into());
        }
        if self.total_steps < self.delta {
            return bad(format!(
                "total_steps ({}) must be at least one checkpoint interval ({})",
                self.total_steps, self.delta
            ));
        }
        if self.k_set.is_empty() || self.k_set.contains(&0) || !unique(&self.k_set) {
            return bad("k_set must be non-empty, positive and without duplicates".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.loss_window < 2 {
            return bad("loss_window must be >= 2".into());
        }
        if let Some(t) = &self.thresholds {
            t.validate()?;
        }
        self.calibration.quantiles.validate()?;
        if let Some(seeds) = &self.calibration.seeds {
            if seeds.is_empty() || !unique(seeds) {
                return bad("calibration seeds must be non-empty and unique".into());
            }
        }
        if let Some(steps) = self.calibration.steps {
            if steps < 3 * self.delta {
                return bad("calibration steps must cover at least three checkpoints".into());
            }
        }
        if self.live.k == 0 {
            return bad("live.k must be >= 1".into());
        }
        for c in &self.cascades {
            c.validate()?;
        }
        self.hyper()?.validate()
    }

    /// Optimizer hyperparameters with the task's learning rate filled in.
    pub fn hyper(&self) -> Result<AdamHyper> {
        let o = &self.optimizer;
        let h = AdamHyper {
            lr: o.lr.unwrap_or_else(|| self.task.default_lr()),
            beta1: o.beta1,
            beta2: o.beta2,
            weight_decay: o.weight_decay,
            eps: o.eps,
            warmup_steps: o.warmup_steps.min(self.total_steps),
            total_steps: self.total_steps,
        };
        Ok(h)
    }

    /// Predictors evaluated by the K-sweep and cascades.
    pub fn predictors(&self) -> Vec<PredictorId> {
        let mut p = vec![PredictorId::Momentum, PredictorId::Linear];
        match self.quad_variant {
            QuadVariant::Paper => p.push(PredictorId::Quadratic),
            QuadVariant::Exact => p.push(PredictorId::QuadraticExact),
            QuadVariant::Both => p.extend([PredictorId::Quadratic, PredictorId::QuadraticExact]),
        }
        p
    }

    pub fn calibration_seeds(&self) -> Vec<u64> {
        self.calibration.seeds.clone().unwrap_or_else(|| self.seeds.clone())
    }

    pub fn calibration_steps(&self) -> u64 {
        self.calibration.steps.unwrap_or(self.total_steps)
    }
}
