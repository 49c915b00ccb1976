//! Analytic weight predictors.
//!
//! ```text
//! momentum         θ̂ = θ_t + K · m / (√v + ε)
//! linear           θ̂ = θ_t + (K/Δ)(θ_t − θ_{t−Δ})
//! quadratic        θ̂ = linear + K(K−Δ)/(2Δ²) · (θ_t − 2θ_{t−Δ} + θ_{t−2Δ})
//! quadratic_exact  θ̂ = linear + K(K+Δ)/(2Δ²) · (θ_t − 2θ_{t−Δ} + θ_{t−2Δ})
//! ```
//!
//! The momentum form uses the raw Adam moments with no learning rate and a
//! positive sign. `quadratic` keeps the `K(K−Δ)` curvature coefficient as
//! published; `quadratic_exact` uses `K(K+Δ)`, which is the Newton
//! backward-difference extrapolation and reproduces any trajectory quadratic
//! in the step index.
//!
//! All predictors are pure. Non-finite outputs are not errors; they are
//! reported through [`Prediction::finite`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{corrected, lr_at, AdamHyper, Moments};
use crate::param::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorId {
    Momentum,
    Linear,
    Quadratic,
    QuadraticExact,
}

impl PredictorId {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictorId::Momentum => "momentum",
            PredictorId::Linear => "linear",
            PredictorId::Quadratic => "quadratic",
            PredictorId::QuadraticExact => "quadratic_exact",
        }
    }

    /// Number of consecutive checkpoints the predictor reads.
    pub fn history_needed(self) -> usize {
        match self {
            PredictorId::Momentum => 1,
            PredictorId::Linear => 2,
            PredictorId::Quadratic | PredictorId::QuadraticExact => 3,
        }
    }
}

impl fmt::Display for PredictorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredictorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "momentum" => Ok(PredictorId::Momentum),
            "linear" => Ok(PredictorId::Linear),
            "quadratic" => Ok(PredictorId::Quadratic),
            "quadratic_exact" | "quadratic-exact" => Ok(PredictorId::QuadraticExact),
            other => Err(Error::Config(format!("unknown predictor `{other}`"))),
        }
    }
}

/// Which momentum formula to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentumVariant {
    /// `θ_t + K·m/(√v+ε)` on raw moments.
    #[default]
    Paper,
    /// `θ_t − K·lr·m̂/(√v̂+ε)` on bias-corrected moments: K more Adam steps
    /// with the current direction frozen.
    Descent,
}

impl FromStr for MomentumVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(MomentumVariant::Paper),
            "descent" => Ok(MomentumVariant::Descent),
            other => Err(Error::Config(format!("unknown momentum variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub predictor: PredictorId,
    pub k: u64,
    pub theta_hat: ParamVector,
    /// `‖θ̂ − θ_t‖₂`
    pub displacement_norm: f64,
    pub finite: bool,
}

impl Prediction {
    fn new(predictor: PredictorId, k: u64, theta_t: &ParamVector, theta_hat: ParamVector) -> Result<Self> {
        let displacement_norm = theta_hat.distance(theta_t)?;
        let finite = theta_hat.is_finite();
        Ok(Prediction {
            predictor,
            k,
            theta_hat,
            displacement_norm,
            finite,
        })
    }
}

fn check_horizon(k: u64, delta: u64) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("prediction horizon K must be >= 1".into()));
    }
    if delta == 0 {
        return Err(Error::Config("checkpoint spacing must be >= 1".into()));
    }
    Ok(())
}

pub fn predict_momentum(theta_t: &ParamVector, m: &ParamVector, v: &ParamVector, k: u64, eps: f64) -> Result<Prediction> {
    check_horizon(k, 1)?;
    theta_t.check_same_len(m)?;
    theta_t.check_same_len(v)?;
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config("momentum eps must be > 0".into()));
    }
    let kf = k as f64;
    let hat = theta_t
        .iter()
        .zip(m.iter().zip(v.iter()))
        .map(|(t, (mi, vi))| t + kf * (mi / (vi.sqrt() + eps)))
        .collect();
    Prediction::new(PredictorId::Momentum, k, theta_t, ParamVector::new(hat)?)
}

/// Descent-signed momentum extrapolation; `step` is the number of updates the
/// raw moments have accumulated.
pub fn predict_momentum_descent(
    theta_t: &ParamVector,
    moments: &Moments,
    step: u64,
    hyper: &AdamHyper,
    k: u64,
) -> Result<Prediction> {
    check_horizon(k, 1)?;
    theta_t.check_same_len(&moments.m)?;
    theta_t.check_same_len(&moments.v)?;
    let c = corrected(moments, step, hyper);
    let scale = k as f64 * lr_at(hyper, step);
    let hat = theta_t
        .iter()
        .zip(c.m.iter().zip(c.v.iter()))
        .map(|(t, (mi, vi))| t - scale * (mi / (vi.sqrt() + hyper.eps)))
        .collect();
    Prediction::new(PredictorId::Momentum, k, theta_t, ParamVector::new(hat)?)
}

pub fn predict_linear(theta_t: &ParamVector, theta_prev: &ParamVector, delta: u64, k: u64) -> Result<Prediction> {
    check_horizon(k, delta)?;
    theta_t.check_same_len(theta_prev)?;
    let r = k as f64 / delta as f64;
    let hat = theta_t
        .iter()
        .zip(theta_prev.iter())
        .map(|(t, p)| t + r * (t - p))
        .collect();
    Prediction::new(PredictorId::Linear, k, theta_t, ParamVector::new(hat)?)
}

fn quadratic_with(
    id: PredictorId,
    curvature: f64,
    theta_t: &ParamVector,
    theta_prev: &ParamVector,
    theta_prev2: &ParamVector,
    delta: u64,
    k: u64,
) -> Result<Prediction> {
    theta_t.check_same_len(theta_prev)?;
    theta_t.check_same_len(theta_prev2)?;
    let r = k as f64 / delta as f64;
    let hat = theta_t
        .iter()
        .zip(theta_prev.iter().zip(theta_prev2.iter()))
        .map(|(t, (p, p2))| t + r * (t - p) + curvature * (t - 2.0 * p + p2))
        .collect();
    Prediction::new(id, k, theta_t, ParamVector::new(hat)?)
}

pub fn predict_quadratic(
    theta_t: &ParamVector,
    theta_prev: &ParamVector,
    theta_prev2: &ParamVector,
    delta: u64,
    k: u64,
) -> Result<Prediction> {
    check_horizon(k, delta)?;
    let (kf, d) = (k as f64, delta as f64);
    let c = kf * (kf - d) / (2.0 * d * d);
    quadratic_with(PredictorId::Quadratic, c, theta_t, theta_prev, theta_prev2, delta, k)
}

pub fn predict_quadratic_exact(
    theta_t: &ParamVector,
    theta_prev: &ParamVector,
    theta_prev2: &ParamVector,
    delta: u64,
    k: u64,
) -> Result<Prediction> {
    check_horizon(k, delta)?;
    let (kf, d) = (k as f64, delta as f64);
    let c = kf * (kf + d) / (2.0 * d * d);
    quadratic_with(PredictorId::QuadraticExact, c, theta_t, theta_prev, theta_prev2, delta, k)
}
