//! Synthetic regression against a fixed random teacher network.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::{
    check_dim, ensure_finite, positive, purpose, rng_for, Batch, Task, TaskGradient,
    DEFAULT_PROBE_COUNT,
};
use crate::error::{Error, Result};
use crate::param::ParamVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpRegressionParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    pub teacher_hidden: usize,
    pub teacher_gain: f64,
    pub noise_std: f64,
    pub batch_size: usize,
    pub val_size: usize,
    pub probe_count: usize,
    pub data_seed: u64,
}

impl Default for MlpRegressionParams {
    fn default() -> Self {
        MlpRegressionParams {
            input_dim: 32,
            hidden: 256,
            output_dim: 4,
            teacher_hidden: 32,
            teacher_gain: 2.0,
            noise_std: 0.1,
            batch_size: 32,
            val_size: 512,
            probe_count: DEFAULT_PROBE_COUNT,
            data_seed: 0,
        }
    }
}

impl MlpRegressionParams {
    pub fn validate(&self) -> Result<()> {
        positive("input_dim", self.input_dim)?;
        positive("hidden", self.hidden)?;
        positive("output_dim", self.output_dim)?;
        positive("teacher_hidden", self.teacher_hidden)?;
        positive("batch_size", self.batch_size)?;
        positive("val_size", self.val_size)?;
        positive("probe_count", self.probe_count)?;
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("mlp-reg noise_std must be finite and >= 0".into()));
        }
        if !(self.teacher_gain > 0.0 && self.teacher_gain.is_finite()) {
            return Err(Error::Config("mlp-reg teacher_gain must be > 0".into()));
        }
        Ok(())
    }
}

pub struct MlpRegression {
    params: MlpRegressionParams,
    net: Mlp,
    teacher: Mlp,
    teacher_params: Vec<f64>,
    val_inputs: Vec<f64>,
    val_targets: Vec<f64>,
    probe_inputs: Vec<f64>,
}

impl MlpRegression {
    pub fn new(params: MlpRegressionParams) -> Self {
        let net = Mlp::new(params.input_dim, params.hidden, params.output_dim);
        let teacher = Mlp::new(params.input_dim, params.teacher_hidden, params.output_dim);
        let mut trng = rng_for(params.data_seed, purpose::TEACHER, 0);
        let teacher_params = teacher.init(&mut trng, params.teacher_gain);

        let mut task = MlpRegression {
            net,
            teacher,
            teacher_params,
            val_inputs: Vec::new(),
            val_targets: Vec::new(),
            probe_inputs: Vec::new(),
            params,
        };
        let mut vrng = rng_for(task.params.data_seed, purpose::VALIDATION, 0);
        let (vi, vt) = task.sample(&mut vrng, task.params.val_size);
        task.val_inputs = vi;
        task.val_targets = vt;
        let mut prng = rng_for(task.params.data_seed, purpose::PROBE, 0);
        task.probe_inputs = (0..task.params.probe_count * task.params.input_dim)
            .map(|_| prng.sample(StandardNormal))
            .collect();
        task
    }

    pub fn params(&self) -> &MlpRegressionParams {
        &self.params
    }

    fn sample(&self, rng: &mut impl Rng, rows: usize) -> (Vec<f64>, Vec<f64>) {
        let inputs: Vec<f64> = (0..rows * self.params.input_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let mut targets = self.teacher.outputs(&self.teacher_params, &inputs);
        for t in &mut targets {
            *t += self.params.noise_std * rng.sample::<f64, _>(StandardNormal);
        }
        (inputs, targets)
    }

    // Mean over rows of ½‖out − target‖².
    fn mse(&self, theta: &[f64], inputs: &[f64], targets: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let rows = inputs.len() / self.net.input;
        let inv = 1.0 / rows as f64;
        let mut hidden = vec![0.0; self.net.hidden];
        let mut d_hidden = vec![0.0; self.net.hidden];
        let mut out = vec![0.0; self.net.output];
        let mut d_out = vec![0.0; self.net.output];
        let mut loss = 0.0;
        let mut grad = grad;
        for (x, t) in inputs
            .chunks_exact(self.net.input)
            .zip(targets.chunks_exact(self.net.output))
        {
            self.net.forward(theta, x, &mut hidden, &mut out);
            for k in 0..self.net.output {
                let e = out[k] - t[k];
                loss += 0.5 * e * e;
                d_out[k] = e * inv;
            }
            if let Some(g) = grad.as_deref_mut() {
                self.net.backward(theta, x, &hidden, &d_out, &mut d_hidden, g);
            }
        }
        loss * inv
    }
}

impl Task for MlpRegression {
    fn name(&self) -> &'static str {
        "mlp-reg"
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
        let (inputs, targets) = self.sample(&mut rng, self.params.batch_size);
        Batch::Regression { inputs, targets }
    }

    fn loss_and_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<TaskGradient> {
        check_dim(theta, self.param_dim())?;
        ensure_finite(theta)?;
        let Batch::Regression { inputs, targets } = batch else {
            return Err(Error::Config("mlp-reg expects a regression batch".into()));
        };
        let mut grad = vec![0.0; self.param_dim()];
        let loss = self.mse(theta.as_slice(), inputs, targets, Some(&mut grad));
        Ok(TaskGradient {
            loss,
            grad: ParamVector::new(grad)?,
        })
    }

    fn validation_loss(&self, theta: &ParamVector) -> f64 {
        if theta.len() != self.param_dim() || !theta.is_finite() {
            return f64::NAN;
        }
        self.mse(theta.as_slice(), &self.val_inputs, &self.val_targets, None)
    }

    fn fingerprint(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        check_dim(theta, self.param_dim())?;
        ensure_finite(theta)?;
        Ok(self.net.outputs(theta.as_slice(), &self.probe_inputs))
    }

    fn fingerprint_len(&self) -> usize {
        self.params.probe_count * self.params.output_dim
    }
}
