//! Tiny next-token prediction over a synthetic alphabet.
//!
//! Sequences come from a fixed second-order Markov source. The model sees the
//! previous `context` tokens one-hot encoded and predicts the next token with a
//! softmax over the alphabet.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::{
    check_dim, ensure_finite, positive, purpose, rng_for, Batch, Task, TaskGradient,
    DEFAULT_PROBE_COUNT,
};
use crate::error::{Error, Result};
use crate::param::ParamVector;

const BURN_IN: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharSeqParams {
    pub vocab: usize,
    pub context: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub val_size: usize,
    pub probe_count: usize,
    /// Exponent applied to uniform draws before normalizing transition rows;
    /// larger values give peakier, more predictable sources.
    pub sharpness: f64,
    pub data_seed: u64,
}

impl Default for CharSeqParams {
    fn default() -> Self {
        CharSeqParams {
            vocab: 16,
            context: 3,
            hidden: 64,
            batch_size: 32,
            val_size: 512,
            probe_count: DEFAULT_PROBE_COUNT,
            sharpness: 4.0,
            data_seed: 0,
        }
    }
}

impl CharSeqParams {
    pub fn validate(&self) -> Result<()> {
        positive("hidden", self.hidden)?;
        positive("context", self.context)?;
        positive("batch_size", self.batch_size)?;
        positive("val_size", self.val_size)?;
        positive("probe_count", self.probe_count)?;
        if self.vocab < 2 {
            return Err(Error::Config("char-seq vocab must be >= 2".into()));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(Error::Config("char-seq sharpness must be > 0".into()));
        }
        Ok(())
    }
}

pub struct CharSeq {
    params: CharSeqParams,
    net: Mlp,
    /// `transition[(a * vocab + b) * vocab + c]` = P(next = c | prev2 = a, prev = b).
    transition: Vec<f64>,
    val_inputs: Vec<f64>,
    val_labels: Vec<usize>,
    probe_inputs: Vec<f64>,
}

impl CharSeq {
    pub fn new(params: CharSeqParams) -> Self {
        let v = params.vocab;
        let net = Mlp::new(params.context * v, params.hidden, v);
        let mut rng = rng_for(params.data_seed, purpose::TEACHER, 0);
        let mut transition = vec![0.0; v * v * v];
        for row in transition.chunks_exact_mut(v) {
            for p in row.iter_mut() {
                *p = rng.random::<f64>().powf(params.sharpness);
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
        }
        let mut task = CharSeq {
            net,
            transition,
            val_inputs: Vec::new(),
            val_labels: Vec::new(),
            probe_inputs: Vec::new(),
            params,
        };
        let mut vrng = rng_for(task.params.data_seed, purpose::VALIDATION, 0);
        let (vi, vl) = task.sample(&mut vrng, task.params.val_size);
        task.val_inputs = vi;
        task.val_labels = vl;
        let mut prng = rng_for(task.params.data_seed, purpose::PROBE, 0);
        task.probe_inputs = task.sample(&mut prng, task.params.probe_count).0;
        task
    }

    fn next_token(&self, rng: &mut impl Rng, a: usize, b: usize) -> usize {
        let v = self.params.vocab;
        let row = &self.transition[(a * v + b) * v..(a * v + b + 1) * v];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (c, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return c;
            }
        }
        v - 1
    }

    fn sample(&self, rng: &mut impl Rng, rows: usize) -> (Vec<f64>, Vec<usize>) {
        let v = self.params.vocab;
        let ctx = self.params.context;
        let len = (ctx + 1).max(2) + BURN_IN;
        let mut inputs = vec![0.0; rows * ctx * v];
        let mut labels = Vec::with_capacity(rows);
        let mut seq = Vec::with_capacity(len);
        for r in 0..rows {
            seq.clear();
            seq.push(rng.random_range(0..v));
            seq.push(rng.random_range(0..v));
            while seq.len() < len {
                let n = seq.len();
                let t = self.next_token(rng, seq[n - 2], seq[n - 1]);
                seq.push(t);
            }
            let window = &seq[len - ctx - 1..];
            for (p, &tok) in window[..ctx].iter().enumerate() {
                inputs[r * ctx * v + p * v + tok] = 1.0;
            }
            labels.push(window[ctx]);
        }
        (inputs, labels)
    }

    // Mean softmax cross-entropy.
    fn cross_entropy(&self, theta: &[f64], inputs: &[f64], labels: &[usize], grad: Option<&mut [f64]>) -> f64 {
        let inv = 1.0 / labels.len() as f64;
        let mut hidden = vec![0.0; self.net.hidden];
        let mut d_hidden = vec![0.0; self.net.hidden];
        let mut logits = vec![0.0; self.net.output];
        let mut d_out = vec![0.0; self.net.output];
        let mut loss = 0.0;
        let mut grad = grad;
        for (x, &label) in inputs.chunks_exact(self.net.input).zip(labels) {
            self.net.forward(theta, x, &mut hidden, &mut logits);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let log_z = max + z.ln();
            loss += log_z - logits[label];
            if let Some(g) = grad.as_deref_mut() {
                for (k, d) in d_out.iter_mut().enumerate() {
                    let p = (logits[k] - log_z).exp();
                    *d = (p - if k == label { 1.0 } else { 0.0 }) * inv;
                }
                self.net.backward(theta, x, &hidden, &d_out, &mut d_hidden, g);
            }
        }
        loss * inv
    }
}

impl Task for CharSeq {
    fn name(&self) -> &'static str {
        "char-seq"
    }

    fn param_dim(&self) -> usize {
        self.net.param_count()
    }

    fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = rng_for(seed, purpose::INIT, 0);
        ParamVector::new(self.net.init(&mut rng, 1.0)).expect("non-empty network")
    }

    fn batch(&self, seed: u64, step: u64) -> Batch {
        let mut rng = rng_for(seed, purpose::BATCH, step);
        let (inputs, labels) = self.sample(&mut rng, self.params.batch_size);
        Batch::Classes { inputs, labels }
    }

    fn loss_and_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<TaskGradient> {
        check_dim(theta, self.param_dim())?;
        ensure_finite(theta)?;
        let Batch::Classes { inputs, labels } = batch else {
            return Err(Error::Config("char-seq expects a class-label batch".into()));
        };
        let mut grad = vec![0.0; self.param_dim()];
        let loss = self.cross_entropy(theta.as_slice(), inputs, labels, Some(&mut grad));
        Ok(TaskGradient {
            loss,
            grad: ParamVector::new(grad)?,
        })
    }

    fn validation_loss(&self, theta: &ParamVector) -> f64 {
        if theta.len() != self.param_dim() || !theta.is_finite() {
            return f64::NAN;
        }
        self.cross_entropy(theta.as_slice(), &self.val_inputs, &self.val_labels, None)
    }

    fn fingerprint(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        check_dim(theta, self.param_dim())?;
        ensure_finite(theta)?;
        Ok(self.net.outputs(theta.as_slice(), &self.probe_inputs))
    }

    fn fingerprint_len(&self) -> usize {
        self.params.probe_count * self.params.vocab
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::gradcheck;

    fn small() -> CharSeq {
        CharSeq::new(CharSeqParams {
            vocab: 5,
            context: 2,
            hidden: 6,
            batch_size: 8,
            val_size: 20,
            probe_count: 10,
            ..Default::default()
        })
    }

    #[test]
    fn transition_rows_are_distributions() {
        let t = small();
        for row in t.transition.chunks_exact(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_logits_give_log_vocab_loss() {
        let t = small();
        let theta = ParamVector::zeros(t.param_dim());
        assert!((t.validation_loss(&theta) - (5f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let task = small();
        for draw in 0..100u64 {
            let theta = task.init_params(draw);
            let batch = task.batch(draw, 2 * draw + 1);
            let err = gradcheck::check(&task, &theta, &batch, 10, draw);
            assert!(err < 1e-5, "draw {draw}: relative error {err}");
        }
    }

    #[test]
    fn fingerprint_length() {
        let t = small();
        assert_eq!(t.fingerprint(&t.init_params(0)).unwrap().len(), 10 * 5);
    }
}
