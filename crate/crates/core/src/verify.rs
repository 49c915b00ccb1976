//! Acceptance criteria on predicted validation loss.
//!
//! - strict: `L̂ < L_t`
//! - adaptive: `L̂ < L_t + σ_L`, with σ_L the sample std of recent validation
//!   losses; not evaluable without enough history
//! - proximity: `|L̂ − L_t| < ε·L_t`
//!
//! Every comparison is strict, so ties reject. A non-finite `L̂` rejects under
//! every criterion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default proximity tolerance (fraction of the current loss).
pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Strict,
    Adaptive,
    Proximity,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Strict, Criterion::Adaptive, Criterion::Proximity];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Strict => "strict",
            Criterion::Adaptive => "adaptive",
            Criterion::Proximity => "proximity",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Criterion::Strict),
            "adaptive" => Ok(Criterion::Adaptive),
            "proximity" | "pct" => Ok(Criterion::Proximity),
            other => Err(Error::Config(format!("unknown criterion `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub strict: bool,
    /// `None` when σ_L is unavailable.
    pub adaptive: Option<bool>,
    pub proximity: bool,
    #[serde(with = "crate::serde_f64")]
    pub l_hat: f64,
    pub l_t: f64,
    pub sigma_l: Option<f64>,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Decision {
    /// Verdict under one criterion; `None` if that criterion is not evaluable.
    pub fn verdict(&self, c: Criterion) -> Option<bool> {
        match c {
            Criterion::Strict => Some(self.strict),
            Criterion::Adaptive => self.adaptive,
            Criterion::Proximity => Some(self.proximity),
        }
    }

    pub fn passes(&self, c: Criterion) -> bool {
        self.verdict(c).unwrap_or(false)
    }
}

pub fn decide(l_hat: f64, l_t: f64, sigma_l: Option<f64>, epsilon: f64) -> Result<Decision> {
    if !(l_t.is_finite() && l_t > 0.0) {
        return Err(Error::Config(format!("current loss must be finite and > 0, got {l_t}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!("proximity epsilon must lie in (0, 1), got {epsilon}")));
    }
    if let Some(s) = sigma_l {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Config(format!("sigma_L must be finite and >= 0, got {s}")));
        }
    }
    if !l_hat.is_finite() {
        return Ok(Decision {
            strict: false,
            adaptive: sigma_l.map(|_| false),
            proximity: false,
            l_hat,
            l_t,
            sigma_l,
            epsilon,
            reason: Some("non-finite prediction".into()),
        });
    }
    Ok(Decision {
        strict: l_hat < l_t,
        adaptive: sigma_l.map(|s| l_hat < l_t + s),
        proximity: (l_hat - l_t).abs() < epsilon * l_t,
        l_hat,
        l_t,
        sigma_l,
        epsilon,
        reason: None,
    })
}
