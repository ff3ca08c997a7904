//! Conjugate Gaussian toy model with an exact parametric posterior.
//!
//! `theta ~ N(prior_mean, prior_var)`, `y | theta ~ N(theta, noise_var)`,
//! independent of `x`. The posterior predictive is Gaussian in closed form,
//! which makes this the reference model for oracle tests.

use std::sync::Arc;

use crate::data::{Dataset, Input, Observation};
use crate::error::{Error, Result};
use crate::model::{LatentSample, Model, ParametricPosterior, PosteriorHandle};
use crate::seed::Seed;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianToy {
    pub prior_mean: f64,
    pub prior_var: f64,
    pub noise_var: f64,
}

impl GaussianToy {
    pub fn new(prior_mean: f64, prior_var: f64, noise_var: f64) -> Result<Self> {
        if !(prior_var > 0.0 && noise_var > 0.0 && prior_mean.is_finite()) {
            return Err(Error::InvalidConfig("toy variances must be positive".into()));
        }
        Ok(GaussianToy { prior_mean, prior_var, noise_var })
    }

    /// Posterior mean and variance of `theta` after observing `y`.
    pub fn posterior(&self, y: &[f64]) -> (f64, f64) {
        let prec = 1.0 / self.prior_var + y.len() as f64 / self.noise_var;
        let var = 1.0 / prec;
        let mean = var * (self.prior_mean / self.prior_var + y.iter().sum::<f64>() / self.noise_var);
        (mean, var)
    }

    /// Closed-form posterior predictive mean and variance of `y`.
    pub fn predictive(&self, y: &[f64]) -> (f64, f64) {
        let (m, v) = self.posterior(y);
        (m, v + self.noise_var)
    }
}

impl Model for GaussianToy {
    fn id(&self) -> String {
        "toy".into()
    }

    fn infer(&self, data: &Dataset, _seed: Seed) -> Result<PosteriorHandle> {
        let (mean, var) = self.posterior(&data.objectives());
        let mut p = ParametricPosterior::default();
        p.gaussians.insert("theta".into(), vec![(mean, var.sqrt())]);
        p.fixed.insert("noise_sd".into(), vec![self.noise_var.sqrt()]);
        Ok(PosteriorHandle::Parametric(Arc::new(p)))
    }

    fn gen(&self, _x: &Input, z: &LatentSample, seed: Seed) -> Result<Observation> {
        let theta = z.scalar("theta")?;
        let sd = z.scalar("noise_sd")?;
        Ok(Observation::new(theta + sd * seed.std_normal()))
    }
}
