//! Checkpoints, the rolling history window and the validation-loss log.

mod format;

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Moments;
use crate::param::ParamVector;
use crate::regime::RegimeLabel;

pub use format::{
    checkpoint_path, decode_checkpoint, encode_checkpoint, list_checkpoints, load_checkpoint,
    load_run, run_dir, save_checkpoint, FORMAT_VERSION, MAGIC,
};

/// Default checkpoint spacing in training steps.
pub const DEFAULT_DELTA: u64 = 50;
/// Default number of recent validation losses behind the adaptive criterion.
pub const DEFAULT_LOSS_WINDOW: usize = 5;

/// Snapshot of a run at a checkpoint boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u64,
    pub theta: ParamVector,
    pub moments: Moments,
    pub val_loss: f64,
    pub fingerprint: Vec<f64>,
    pub regime: RegimeLabel,
    pub seed: u64,
}

impl Checkpoint {
    pub fn with_regime(mut self, regime: RegimeLabel) -> Self {
        self.regime = regime;
        self
    }
}

/// The most recent (at most three) checkpoints, spaced exactly `delta` apart.
#[derive(Clone, Debug)]
pub struct HistoryWindow {
    delta: u64,
    items: VecDeque<Arc<Checkpoint>>,
}

impl HistoryWindow {
    pub const CAPACITY: usize = 3;

    pub fn new(delta: u64) -> Self {
        assert!(delta > 0, "checkpoint spacing must be positive");
        HistoryWindow {
            delta,
            items: VecDeque::with_capacity(Self::CAPACITY),
        }
    }

    /// Builds a window from up to three consecutive checkpoints, oldest first.
    pub fn from_checkpoints<I>(delta: u64, ckpts: I) -> Result<Self>
    where
        I: IntoIterator<Item = Arc<Checkpoint>>,
    {
        let mut w = HistoryWindow::new(delta);
        for c in ckpts {
            w.push(c)?;
        }
        Ok(w)
    }

    pub fn delta(&self) -> u64 {
        self.delta
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends a checkpoint `delta` after the newest one, dropping the oldest
    /// beyond capacity.
    pub fn push(&mut self, ckpt: Arc<Checkpoint>) -> Result<()> {
        if let Some(last) = self.items.back() {
            if ckpt.step != last.step + self.delta {
                return Err(Error::Ineligible(format!(
                    "history spacing broken: {} then {} (delta {})",
                    last.step, ckpt.step, self.delta
                )));
            }
        }
        self.items.push_back(ckpt);
        while self.items.len() > Self::CAPACITY {
            self.items.pop_front();
        }
        Ok(())
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    /// Newest checkpoint (θ_t).
    pub fn current(&self) -> Option<&Arc<Checkpoint>> {
        self.items.back()
    }

    /// `back(0)` is θ_t, `back(1)` is θ_{t−Δ}, `back(2)` is θ_{t−2Δ}.
    pub fn back(&self, i: usize) -> Option<&Arc<Checkpoint>> {
        self.items.len().checked_sub(i + 1).map(|j| &self.items[j])
    }

    pub fn steps(&self) -> Vec<u64> {
        self.items.iter().map(|c| c.step).collect()
    }
}

/// Sample standard deviation of the last `window` losses (all of them if
/// fewer are available).
pub fn recent_loss_std(losses: &[f64], window: usize) -> Result<f64> {
    let take = window.min(losses.len());
    if take < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            available: take,
        });
    }
    let tail = &losses[losses.len() - take..];
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    if tail.iter().all(|x| *x == tail[0]) {
        return Ok(0.0);
    }
    let var = tail.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn ckpt(step: u64) -> Arc<Checkpoint> {
        Arc::new(Checkpoint {
            step,
            theta: ParamVector::zeros(2),
            moments: Moments {
                m: ParamVector::zeros(2),
                v: ParamVector::zeros(2),
            },
            val_loss: 1.0,
            fingerprint: vec![1.0],
            regime: RegimeLabel::Unknown,
            seed: 42,
        })
    }

    #[test]
    fn window_keeps_last_three() {
        let mut w = HistoryWindow::new(50);
        for s in [50, 100, 150] {
            w.push(ckpt(s)).unwrap();
        }
        assert_eq!(w.steps(), vec![50, 100, 150]);
        w.push(ckpt(200)).unwrap();
        assert_eq!(w.steps(), vec![100, 150, 200]);
        assert_eq!(w.back(0).unwrap().step, 200);
        assert_eq!(w.back(2).unwrap().step, 100);
        assert!(w.back(3).is_none());
    }

    #[test]
    fn window_rejects_broken_spacing() {
        let mut w = HistoryWindow::new(50);
        w.push(ckpt(50)).unwrap();
        assert!(w.push(ckpt(125)).is_err());
        assert_eq!(w.steps(), vec![50]);
        w.clear();
        w.push(ckpt(125)).unwrap();
    }

    #[test]
    fn loss_std_examples() {
        assert_eq!(recent_loss_std(&[1.0, 1.0, 1.0], 5).unwrap(), 0.0);
        let s = recent_loss_std(&[1.0, 2.0], 2).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        // window larger than history uses everything
        assert_eq!(recent_loss_std(&[1.0, 2.0], 10).unwrap(), s);
        // only the tail counts
        assert_eq!(recent_loss_std(&[100.0, 1.0, 2.0], 2).unwrap(), s);
    }

    #[test]
    fn loss_std_needs_two_samples() {
        assert!(matches!(
            recent_loss_std(&[1.0], 5),
            Err(Error::InsufficientHistory { needed: 2, available: 1 })
        ));
        assert!(recent_loss_std(&[1.0, 2.0, 3.0], 1).is_err());
    }

    proptest! {
        #[test]
        fn loss_std_non_negative_and_zero_iff_constant(
            losses in prop::collection::vec(0.0f64..10.0, 2..20),
            window in 2usize..25,
        ) {
            let s = recent_loss_std(&losses, window).unwrap();
            prop_assert!(s >= 0.0);
            let take = window.min(losses.len());
            let tail = &losses[losses.len() - take..];
            let constant = tail.iter().all(|x| *x == tail[0]);
            prop_assert_eq!(s == 0.0, constant);
        }

        #[test]
        fn window_spacing_holds_after_every_push(n in 1usize..20) {
            let mut w = HistoryWindow::new(50);
            for i in 1..=n as u64 {
                w.push(ckpt(50 * i)).unwrap();
                let steps = w.steps();
                prop_assert!(steps.windows(2).all(|p| p[1] - p[0] == 50));
                prop_assert!(w.len() <= 3);
            }
        }
    }
}
