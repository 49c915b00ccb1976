//! Training-regime detection from consecutive fingerprint similarity.
//!
//! `s_t = cos(a_t, a_{t−Δ})` is compared against two thresholds: above
//! `tau_high` is stable, below `tau_low` is chaotic, anything else (including
//! exact ties) is transition. The first checkpoint of a run has no predecessor
//! and is always unknown.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::cosine_similarity;
use crate::trajectory::Checkpoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeLabel {
    Unknown,
    Chaotic,
    Transition,
    Stable,
}

impl RegimeLabel {
    pub const ALL: [RegimeLabel; 4] = [
        RegimeLabel::Chaotic,
        RegimeLabel::Transition,
        RegimeLabel::Stable,
        RegimeLabel::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::Unknown => "unknown",
            RegimeLabel::Chaotic => "chaotic",
            RegimeLabel::Transition => "transition",
            RegimeLabel::Stable => "stable",
        }
    }

    /// Byte code used by the checkpoint file format.
    pub fn code(self) -> u8 {
        match self {
            RegimeLabel::Unknown => 0,
            RegimeLabel::Chaotic => 1,
            RegimeLabel::Transition => 2,
            RegimeLabel::Stable => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => RegimeLabel::Unknown,
            1 => RegimeLabel::Chaotic,
            2 => RegimeLabel::Transition,
            3 => RegimeLabel::Stable,
            _ => return None,
        })
    }

    /// True for regimes where speculation is allowed.
    pub fn is_favorable(self) -> bool {
        matches!(self, RegimeLabel::Transition | RegimeLabel::Stable)
    }
}

impl fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegimeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unknown" => Ok(RegimeLabel::Unknown),
            "chaotic" => Ok(RegimeLabel::Chaotic),
            "transition" => Ok(RegimeLabel::Transition),
            "stable" => Ok(RegimeLabel::Stable),
            other => Err(Error::Config(format!("unknown regime `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tau_low: f64,
    pub tau_high: f64,
}

impl Thresholds {
    pub fn new(tau_low: f64, tau_high: f64) -> Result<Self> {
        let t = Thresholds { tau_low, tau_high };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (-1.0..=1.0).contains(&self.tau_low)
            && (-1.0..=1.0).contains(&self.tau_high)
            && self.tau_low < self.tau_high;
        if !ok {
            return Err(Error::InvalidThresholds {
                low: self.tau_low,
                high: self.tau_high,
            });
        }
        Ok(())
    }
}

/// Quantiles of the similarity distribution used as calibrated thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationQuantiles {
    pub low: f64,
    pub high: f64,
}

impl Default for CalibrationQuantiles {
    fn default() -> Self {
        CalibrationQuantiles {
            low: 0.25,
            high: 0.75,
        }
    }
}

impl CalibrationQuantiles {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.low) || !(0.0..=1.0).contains(&self.high) || self.low >= self.high {
            return Err(Error::Config(format!(
                "calibration quantiles must satisfy 0 <= low < high <= 1 (got {}, {})",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

/// Similarity between a checkpoint and its predecessor exactly `delta` steps back.
pub fn similarity_at(curr: &Checkpoint, prev: &Checkpoint, delta: u64) -> Result<f64> {
    if curr.step != prev.step + delta {
        return Err(Error::Ineligible(format!(
            "similarity needs spacing {delta}, got checkpoints at {} and {}",
            prev.step, curr.step
        )));
    }
    cosine_similarity(&curr.fingerprint, &prev.fingerprint)
}

pub fn classify(s: f64, th: &Thresholds) -> RegimeLabel {
    if s > th.tau_high {
        RegimeLabel::Stable
    } else if s < th.tau_low {
        RegimeLabel::Chaotic
    } else {
        RegimeLabel::Transition
    }
}

/// Labels for a run given per-checkpoint similarities; `None` marks a
/// checkpoint with no comparable predecessor.
pub fn label_similarities(similarities: &[Option<f64>], th: &Thresholds) -> Vec<RegimeLabel> {
    similarities
        .iter()
        .map(|s| s.map_or(RegimeLabel::Unknown, |s| classify(s, th)))
        .collect()
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Per-trace quantile thresholds, averaged across traces.
pub fn calibrate(traces: &[Vec<f64>], quantiles: CalibrationQuantiles) -> Result<Thresholds> {
    quantiles.validate()?;
    if traces.is_empty() {
        return Err(Error::DegenerateCalibration("no similarity traces".into()));
    }
    let mut low = 0.0;
    let mut high = 0.0;
    for (i, trace) in traces.iter().enumerate() {
        if trace.is_empty() {
            return Err(Error::DegenerateCalibration(format!(
                "trace {i} has no similarities (needs at least two checkpoints)"
            )));
        }
        if trace.iter().any(|s| !s.is_finite()) {
            return Err(Error::DegenerateCalibration(format!("trace {i} has non-finite similarity")));
        }
        let mut sorted = trace.clone();
        sorted.sort_by(f64::total_cmp);
        let lo = quantile(&sorted, quantiles.low);
        let hi = quantile(&sorted, quantiles.high);
        if lo >= hi {
            return Err(Error::DegenerateCalibration(format!(
                "trace {i} gives tau_low {lo} >= tau_high {hi}; widen the quantiles or use longer runs"
            )));
        }
        low += lo;
        high += hi;
    }
    let n = traces.len() as f64;
    Thresholds::new(low / n, high / n)
        .map_err(|e| Error::DegenerateCalibration(e.to_string()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeCounts {
    pub chaotic: usize,
    pub transition: usize,
    pub stable: usize,
    pub unknown: usize,
}

impl RegimeCounts {
    pub fn get(&self, label: RegimeLabel) -> usize {
        match label {
            RegimeLabel::Chaotic => self.chaotic,
            RegimeLabel::Transition => self.transition,
            RegimeLabel::Stable => self.stable,
            RegimeLabel::Unknown => self.unknown,
        }
    }

    pub fn total(&self) -> usize {
        self.chaotic + self.transition + self.stable + self.unknown
    }
}

pub fn regime_breakdown<I>(labels: I) -> RegimeCounts
where
    I: IntoIterator<Item = RegimeLabel>,
{
    let mut c = RegimeCounts::default();
    for l in labels {
        match l {
            RegimeLabel::Chaotic => c.chaotic += 1,
            RegimeLabel::Transition => c.transition += 1,
            RegimeLabel::Stable => c.stable += 1,
            RegimeLabel::Unknown => c.unknown += 1,
        }
    }
    c
}

/// Step of the first checkpoint that leaves a chaotic stretch, if any.
pub fn first_chaotic_exit(steps_and_labels: &[(u64, RegimeLabel)]) -> Option<u64> {
    steps_and_labels
        .windows(2)
        .find(|w| w[0].1 == RegimeLabel::Chaotic && w[1].1.is_favorable())
        .map(|w| w[1].0)
}
