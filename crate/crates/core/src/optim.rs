//! AdamW with linear warmup and cosine decay.
//!
//! ```text
//! θ ← θ · (1 − lr·λ)
//! m ← β₁ m + (1 − β₁) g
//! v ← β₂ v + (1 − β₂) g²
//! θ ← θ − lr · m̂ / (√v̂ + ε),   m̂ = m / (1 − β₁ᵗ),  v̂ = v / (1 − β₂ᵗ)
//! ```
//!
//! `lr` is the scheduled rate for the update that starts at the current step.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            eps: 1e-8,
            warmup_steps: 100,
            total_steps: 2000,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("optimizer: {msg}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and > 0");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and >= 0");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps must be finite and > 0");
        }
        if self.total_steps == 0 || self.warmup_steps > self.total_steps {
            return bad("need 0 < total_steps and warmup_steps <= total_steps");
        }
        Ok(())
    }
}

/// Learning rate for the update starting at `step`.
///
/// Linear ramp `lr·max(step, 1)/warmup` up to `warmup_steps`, so the first
/// update already moves, then cosine decay to 0 at `total_steps`. Steps past
/// the end clamp to 0.
pub fn lr_at(hyper: &AdamHyper, step: u64) -> f64 {
    let w = hyper.warmup_steps;
    if w > 0 && step <= w {
        return hyper.lr * step.max(1) as f64 / w as f64;
    }
    if step >= hyper.total_steps {
        return 0.0;
    }
    let span = (hyper.total_steps - w) as f64;
    let progress = (step - w) as f64 / span;
    0.5 * hyper.lr * (1.0 + (PI * progress).cos())
}

/// Immutable copy of the optimizer moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: ParamVector,
    pub v: ParamVector,
}

/// How optimizer state advances across an accepted leap of `K` steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FastForwardPolicy {
    /// Moments unchanged, step counter advances by `K`.
    #[default]
    Carry,
    /// Moments multiplied by `β₁ᴷ` and `β₂ᴷ`, step counter advances by `K`.
    Decay,
}

impl std::str::FromStr for FastForwardPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "carry" => Ok(FastForwardPolicy::Carry),
            "decay" => Ok(FastForwardPolicy::Decay),
            other => Err(Error::Config(format!("unknown fast-forward policy `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: ParamVector,
    v: ParamVector,
    step: u64,
    hyper: AdamHyper,
}

impl AdamState {
    pub fn new(dim: usize, hyper: AdamHyper) -> Self {
        AdamState {
            m: ParamVector::zeros(dim),
            v: ParamVector::zeros(dim),
            step: 0,
            hyper,
        }
    }

    /// Rebuilds a state from persisted moments.
    pub fn from_parts(moments: Moments, step: u64, hyper: AdamHyper) -> Result<Self> {
        moments.m.check_same_len(&moments.v)?;
        if moments.v.iter().any(|x| *x < 0.0) {
            return Err(Error::Config("second moment must be non-negative".into()));
        }
        Ok(AdamState {
            m: moments.m,
            v: moments.v,
            step,
            hyper,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn hyper(&self) -> &AdamHyper {
        &self.hyper
    }

    pub fn m(&self) -> &ParamVector {
        &self.m
    }

    pub fn v(&self) -> &ParamVector {
        &self.v
    }

    pub fn snapshot_moments(&self) -> Moments {
        Moments {
            m: self.m.clone(),
            v: self.v.clone(),
        }
    }

    /// One AdamW step. Returns the new parameters; the state advances by one.
    pub fn apply_update(&mut self, theta: &ParamVector, grad: &ParamVector) -> Result<ParamVector> {
        theta.check_same_len(&self.m)?;
        grad.check_same_len(&self.m)?;
        if !grad.is_finite() {
            return Err(Error::NonFinite(format!("gradient at step {}", self.step)));
        }
        let h = &self.hyper;
        let lr = lr_at(h, self.step);
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        let decay = 1.0 - lr * h.weight_decay;

        let mut m = std::mem::replace(&mut self.m, ParamVector::zeros(1)).into_inner();
        let mut v = std::mem::replace(&mut self.v, ParamVector::zeros(1)).into_inner();
        let mut out = Vec::with_capacity(theta.len());
        for i in 0..theta.len() {
            let g = grad[i];
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            out.push(theta[i] * decay - lr * m_hat / (v_hat.sqrt() + h.eps));
        }
        self.m = ParamVector::new(m)?;
        self.v = ParamVector::new(v)?;
        self.step += 1;
        ParamVector::new(out)
    }

    /// Advances the state across a leap of `k` skipped updates.
    pub fn fast_forward(&mut self, k: u64, policy: FastForwardPolicy) {
        if policy == FastForwardPolicy::Decay {
            let exp = i32::try_from(k).unwrap_or(i32::MAX);
            self.m = self.m.scale(self.hyper.beta1.powi(exp));
            self.v = self.v.scale(self.hyper.beta2.powi(exp));
        }
        self.step += k;
    }

    /// Bias-corrected moments at the current step.
    pub fn corrected_moments(&self) -> Moments {
        corrected(&self.snapshot_moments(), self.step, &self.hyper)
    }
}

/// Bias-corrects raw moments accumulated over `step` updates.
pub fn corrected(moments: &Moments, step: u64, hyper: &AdamHyper) -> Moments {
    if step == 0 {
        return moments.clone();
    }
    let t = i32::try_from(step).unwrap_or(i32::MAX);
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    Moments {
        m: moments.m.scale(1.0 / bc1),
        v: moments.v.scale(1.0 / bc2),
    }
}
