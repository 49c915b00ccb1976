//! One-hidden-layer tanh network over a flat parameter vector.
//!
//! Layout: `W1 (hidden × input, row-major) | b1 | W2 (output × hidden) | b2`.

use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Mlp {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            input,
            hidden,
            output,
        }
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        (b1, w2, b2)
    }

    /// Scaled-normal weights with `gain / sqrt(fan_in)`, zero biases.
    pub fn init(&self, rng: &mut impl Rng, gain: f64) -> Vec<f64> {
        let (b1, w2, b2) = self.offsets();
        let mut p = vec![0.0; self.param_count()];
        let s1 = gain / (self.input as f64).sqrt();
        let s2 = gain / (self.hidden as f64).sqrt();
        for w in &mut p[..b1] {
            *w = s1 * rng.sample::<f64, _>(StandardNormal);
        }
        for w in &mut p[w2..b2] {
            *w = s2 * rng.sample::<f64, _>(StandardNormal);
        }
        p
    }

    /// Forward pass for one row; writes hidden activations and outputs.
    pub fn forward(&self, params: &[f64], x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let (b1, w2, b2) = self.offsets();
        for j in 0..self.hidden {
            let row = &params[j * self.input..(j + 1) * self.input];
            let z: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + params[b1 + j];
            hidden[j] = z.tanh();
        }
        for k in 0..self.output {
            let row = &params[w2 + k * self.hidden..w2 + (k + 1) * self.hidden];
            out[k] = row.iter().zip(hidden.iter()).map(|(w, h)| w * h).sum::<f64>() + params[b2 + k];
        }
    }

    /// Accumulates parameter gradients for one row given `d_out = ∂L/∂out`.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        hidden: &[f64],
        d_out: &[f64],
        d_hidden: &mut [f64],
        grad: &mut [f64],
    ) {
        let (b1, w2, b2) = self.offsets();
        d_hidden.iter_mut().for_each(|d| *d = 0.0);
        for k in 0..self.output {
            let dk = d_out[k];
            grad[b2 + k] += dk;
            let base = w2 + k * self.hidden;
            for j in 0..self.hidden {
                grad[base + j] += dk * hidden[j];
                d_hidden[j] += dk * params[base + j];
            }
        }
        for j in 0..self.hidden {
            let dz = d_hidden[j] * (1.0 - hidden[j] * hidden[j]);
            grad[b1 + j] += dz;
            let base = j * self.input;
            for (g, xi) in grad[base..base + self.input].iter_mut().zip(x) {
                *g += dz * xi;
            }
        }
    }

    /// Outputs for every row of `inputs`, concatenated.
    pub fn outputs(&self, params: &[f64], inputs: &[f64]) -> Vec<f64> {
        let rows = inputs.len() / self.input;
        let mut hidden = vec![0.0; self.hidden];
        let mut out = vec![0.0; rows * self.output];
        for (x, o) in inputs
            .chunks_exact(self.input)
            .zip(out.chunks_exact_mut(self.output))
        {
            self.forward(params, x, &mut hidden, o);
        }
        out
    }
}
