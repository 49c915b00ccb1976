//! Quadratic bowl `½ Σ λᵢ (θᵢ − θ*ᵢ)²` with a log-spaced curvature spectrum.
//!
//! Minibatch noise enters as a linear term `ξ·θ`, so the per-batch gradient is
//! `λ ⊙ (θ − θ*) + ξ` and stays the exact derivative of the per-batch loss.
//! The validation loss is the noiseless bowl. There are no activations, so the
//! fingerprint is θ itself.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_dim, ensure_finite, positive, purpose, rng_for, Batch, Task, TaskGradient};
use crate::error::{Error, Result};
use crate::param::ParamVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadBowlParams {
    pub dim: usize,
    pub curvature_min: f64,
    pub curvature_max: f64,
    pub noise_std: f64,
    pub init_scale: f64,
    pub data_seed: u64,
    /// When set, the optimum is exactly this vector instead of a seeded draw.
    pub optimum: Option<Vec<f64>>,
}

impl Default for QuadBowlParams {
    fn default() -> Self {
        QuadBowlParams {
            dim: 64,
            curvature_min: 0.01,
            curvature_max: 1.0,
            noise_std: 0.1,
            init_scale: 3.0,
            data_seed: 0,
            optimum: None,
        }
    }
}

impl QuadBowlParams {
    pub fn validate(&self) -> Result<()> {
        positive("dim", self.dim)?;
        if !(self.curvature_min > 0.0 && self.curvature_min <= self.curvature_max)
            || !self.curvature_max.is_finite()
        {
            return Err(Error::Config(
                "quad-bowl needs 0 < curvature_min <= curvature_max".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("quad-bowl noise_std must be finite and >= 0".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("quad-bowl init_scale must be finite and >= 0".into()));
        }
        if let Some(opt) = &self.optimum {
            if opt.len() != self.dim || opt.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(
                    "quad-bowl optimum must have `dim` finite entries".into(),
                ));
            }
        }
        Ok(())
    }
}

pub struct QuadBowl {
    params: QuadBowlParams,
    curvature: Vec<f64>,
    optimum: Vec<f64>,
}

impl QuadBowl {
    pub fn new(params: QuadBowlParams) -> Self {
        let n = params.dim;
        let curvature = (0..n)
            .map(|i| {
                if n == 1 {
                    params.curvature_max
                } else {
                    let f = i as f64 / (n - 1) as f64;
                    params.curvature_min * (params.curvature_max / params.curvature_min).powf(f)
                }
            })
            .collect();
        let optimum = match &params.optimum {
            Some(o) => o.clone(),
            None => {
                let mut rng = rng_for(params.data_seed, purpose::TEACHER, 0);
                (0..n).map(|_| rng.sample(StandardNormal)).collect()
            }
        };
        QuadBowl {
            params,
            curvature,
            optimum,
        }
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn optimum(&self) -> &[f64] {
        &self.optimum
    }

    fn bowl(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(&self.optimum)
            .zip(&self.curvature)
            .map(|((t, o), l)| 0.5 * l * (t - o) * (t - o))
            .sum()
    }
}

impl Task for QuadBowl {
    fn name(&self) -> &'static str {
        "quad-bowl"
    }

    fn param_dim(&self) -> usize {
        self.params.dim
    }

    fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = rng_for(seed, purpose::INIT, 0);
        let v = self
            .optimum
            .iter()
            .map(|o| o + self.params.init_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        ParamVector::new(v).expect("dim > 0")
    }

    fn batch(&self, seed: u64, step: u64) -> Batch {
        if self.params.noise_std == 0.0 {
            return Batch::Noise(vec![0.0; self.params.dim]);
        }
        let mut rng = rng_for(seed, purpose::BATCH, step);
        Batch::Noise(
            (0..self.params.dim)
                .map(|_| self.params.noise_std * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }

    fn loss_and_grad(&self, theta: &ParamVector, batch: &Batch) -> Result<TaskGradient> {
        check_dim(theta, self.param_dim())?;
        ensure_finite(theta)?;
        let Batch::Noise(noise) = batch else {
            return Err(Error::Config("quad-bowl expects a noise batch".into()));
        };
        crate::param::check_len(self.params.dim, noise.len())?;
        let t = theta.as_slice();
        let loss = self.bowl(t) + crate::param::dot(noise, t)?;
        let grad = t
            .iter()
            .zip(&self.optimum)
            .zip(&self.curvature)
            .zip(noise)
            .map(|(((t, o), l), xi)| l * (t - o) + xi)
            .collect();
        Ok(TaskGradient {
            loss,
            grad: ParamVector::new(grad)?,
        })
    }

    fn validation_loss(&self, theta: &ParamVector) -> f64 {
        if theta.len() != self.param_dim() || !theta.is_finite() {
            return f64::NAN;
        }
        self.bowl(theta.as_slice())
    }

    fn fingerprint(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        check_dim(theta, self.param_dim())?;
        ensure_finite(theta)?;
        Ok(theta.as_slice().to_vec())
    }

    fn fingerprint_len(&self) -> usize {
        self.params.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::gradcheck;

    fn one_dim(optimum: f64) -> QuadBowl {
        QuadBowl::new(QuadBowlParams {
            dim: 1,
            curvature_min: 1.0,
            curvature_max: 1.0,
            noise_std: 0.0,
            optimum: Some(vec![optimum]),
            ..Default::default()
        })
    }

    #[test]
    fn minimum_has_zero_loss_and_gradient() {
        let task = QuadBowl::new(QuadBowlParams {
            noise_std: 0.0,
            ..Default::default()
        });
        let theta = ParamVector::new(task.optimum().to_vec()).unwrap();
        let g = task.loss_and_grad(&theta, &task.batch(0, 0)).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.grad.iter().all(|&x| x == 0.0));
        assert_eq!(task.validation_loss(&theta), 0.0);
    }

    #[test]
    fn one_dimensional_example() {
        let task = one_dim(0.0);
        let theta = ParamVector::new(vec![2.0]).unwrap();
        let g = task.loss_and_grad(&theta, &task.batch(0, 0)).unwrap();
        assert_eq!(g.loss, 2.0);
        assert_eq!(g.grad.as_slice(), &[2.0]);
    }

    #[test]
    fn fingerprint_is_theta() {
        let task = QuadBowl::new(QuadBowlParams::default());
        let theta = task.init_params(5);
        assert_eq!(task.fingerprint(&theta).unwrap(), theta.as_slice());
    }

    #[test]
    fn curvature_spectrum_is_log_spaced() {
        let task = QuadBowl::new(QuadBowlParams {
            dim: 3,
            curvature_min: 0.01,
            curvature_max: 1.0,
            ..Default::default()
        });
        let c = task.curvature();
        assert!((c[0] - 0.01).abs() < 1e-15);
        assert!((c[1] - 0.1).abs() < 1e-15);
        assert!((c[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let task = QuadBowl::new(QuadBowlParams::default());
        for draw in 0..100u64 {
            let theta = task.init_params(draw);
            let batch = task.batch(draw, draw);
            let err = gradcheck::check(&task, &theta, &batch, 10, draw);
            assert!(err < 1e-5, "draw {draw}: relative error {err}");
        }
    }
}
