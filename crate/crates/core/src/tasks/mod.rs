//! Built-in trainable systems.
//!
//! Each task supplies a deterministic minibatch stream keyed by `(seed, step)`,
//! a fixed validation set, and a fixed probe set used for activation
//! fingerprints. Validation and probe data depend only on the task's
//! `data_seed`, so every run seed sees the same held-out data.

mod char_seq;
mod mlp;
mod mlp_reg;
mod quad_bowl;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamVector;

pub use char_seq::{CharSeq, CharSeqParams};
pub use mlp::Mlp;
pub use mlp_reg::{MlpRegression, MlpRegressionParams};
pub use quad_bowl::{QuadBowl, QuadBowlParams};

/// Default number of probe inputs behind each fingerprint.
pub const DEFAULT_PROBE_COUNT: usize = 100;

/// One minibatch. The variant is fixed per task.
#[derive(Clone, Debug, PartialEq)]
pub enum Batch {
    /// Additive gradient noise for the quadratic bowl.
    Noise(Vec<f64>),
    /// Row-major inputs with dense regression targets.
    Regression {
        inputs: Vec<f64>,
        targets: Vec<f64>,
    },
    /// Row-major inputs with class labels.
    Classes { inputs: Vec<f64>, labels: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskGradient {
    pub loss: f64,
    pub grad: ParamVector,
}

/// A trainable system with a flat parameter vector.
pub trait Task: Send + Sync {
    fn name(&self) -> &'static str;

    fn param_dim(&self) -> usize;

    /// Initial parameters for a run seed.
    fn init_params(&self, seed: u64) -> ParamVector;

    /// The minibatch consumed by the update that starts at `step`.
    fn batch(&self, seed: u64, step: u64) -> Batch;

    fn loss_and_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<TaskGradient>;

    /// Mean loss over the fixed validation set. Non-finite `theta` yields NaN.
    fn validation_loss(&self, theta: &ParamVector) -> f64;

    /// Concatenated final-layer outputs over the probe set, in probe order.
    fn fingerprint(&self, theta: &ParamVector) -> Result<Vec<f64>>;

    fn fingerprint_len(&self) -> usize;
}

/// Task selection as it appears in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskConfig {
    QuadBowl(QuadBowlParams),
    MlpReg(MlpRegressionParams),
    CharSeq(CharSeqParams),
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig::MlpReg(MlpRegressionParams::default())
    }
}

impl TaskConfig {
    /// Parses a task name with default parameters.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "quad-bowl" => Ok(TaskConfig::QuadBowl(QuadBowlParams::default())),
            "mlp-reg" => Ok(TaskConfig::MlpReg(MlpRegressionParams::default())),
            "char-seq" => Ok(TaskConfig::CharSeq(CharSeqParams::default())),
            other => Err(Error::Config(format!(
                "unknown task `{other}` (expected quad-bowl, mlp-reg or char-seq)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::QuadBowl(_) => "quad-bowl",
            TaskConfig::MlpReg(_) => "mlp-reg",
            TaskConfig::CharSeq(_) => "char-seq",
        }
    }

    /// Base learning rate used when the optimizer section leaves it unset.
    pub fn default_lr(&self) -> f64 {
        match self {
            TaskConfig::QuadBowl(_) => 0.05,
            TaskConfig::MlpReg(_) => 1e-4,
            TaskConfig::CharSeq(_) => 3e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TaskConfig::QuadBowl(p) => p.validate(),
            TaskConfig::MlpReg(p) => p.validate(),
            TaskConfig::CharSeq(p) => p.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Task>> {
        self.validate()?;
        Ok(match self {
            TaskConfig::QuadBowl(p) => Box::new(QuadBowl::new(p.clone())),
            TaskConfig::MlpReg(p) => Box::new(MlpRegression::new(p.clone())),
            TaskConfig::CharSeq(p) => Box::new(CharSeq::new(p.clone())),
        })
    }
}

/// Independent RNG streams per (seed, purpose, index).
pub(crate) fn rng_for(seed: u64, purpose: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ purpose);
    rng.set_stream(stream);
    rng
}

pub(crate) mod purpose {
    pub const INIT: u64 = 0x494E_4954;
    pub const BATCH: u64 = 0x4241_5443;
    pub const TEACHER: u64 = 0x5445_4143;
    pub const VALIDATION: u64 = 0x5641_4C49;
    pub const PROBE: u64 = 0x5052_4F42;
}

pub(crate) fn ensure_finite(theta: &ParamVector) -> Result<()> {
    if !theta.is_finite() {
        return Err(Error::NonFinite("parameter vector".into()));
    }
    Ok(())
}

pub(crate) fn check_dim(theta: &ParamVector, dim: usize) -> Result<()> {
    crate::param::check_len(dim, theta.len())
}

pub(crate) fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("task parameter `{name}` must be > 0")));
    }
    Ok(())
}
