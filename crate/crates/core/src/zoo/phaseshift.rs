//! One-dimensional phase-shift model: a sum of logistic steps.

use super::mh::mh_infer;
use super::{cached_model_ops, data_scale, priors, CachedGen, ModelContext};
use crate::data::{Dataset, Input, Observation};
use crate::error::{Error, Result};
use crate::model::{LatentSample, Model, PosteriorHandle};
use crate::seed::Seed;
use crate::stats::{normal_logpdf, sigmoid};

/// `m / (1 + exp(-s (x - mu)))`.
#[inline]
pub fn logistic(x: f64, m: f64, s: f64, mu: f64) -> f64 {
    m * sigmoid(s * (x - mu))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseShiftParams {
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub mu: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma2: f64,
}

impl PhaseShiftParams {
    pub fn components(&self) -> usize {
        self.m.len()
    }

    pub fn mean(&self, x: f64) -> f64 {
        (0..self.components())
            .map(|k| logistic(x, self.m[k], self.s[k], self.mu[k]) + self.b[k])
            .sum()
    }

    /// Packed per component as `[m, ln s, mu, b]`, then `ln sigma2`.
    fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 * self.components() + 1);
        for k in 0..self.components() {
            v.extend([self.m[k], self.s[k].ln(), self.mu[k], self.b[k]]);
        }
        v.push(self.sigma2.ln());
        v
    }

    fn from_slice(t: &[f64]) -> Self {
        let k = (t.len() - 1) / 4;
        let col = |j: usize| (0..k).map(|i| t[4 * i + j]).collect::<Vec<_>>();
        PhaseShiftParams {
            m: col(0),
            s: col(1).into_iter().map(f64::exp).collect(),
            mu: col(2),
            b: col(3),
            sigma2: t[4 * k].exp(),
        }
    }

    pub fn to_latent(&self) -> LatentSample {
        LatentSample::builder()
            .vector("m", self.m.clone())
            .vector("s", self.s.clone())
            .vector("mu", self.mu.clone())
            .vector("b", self.b.clone())
            .scalar("sigma2", self.sigma2)
            .build()
    }

    pub fn from_latent(z: &LatentSample) -> Result<Self> {
        Ok(PhaseShiftParams {
            m: z.get("m")?.to_vec(),
            s: z.get("s")?.to_vec(),
            mu: z.get("mu")?.to_vec(),
            b: z.get("b")?.to_vec(),
            sigma2: z.scalar("sigma2")?,
        })
    }
}

/// Phase-shift regression, id `"phaseshift"`. Inputs must be scalar.
#[derive(Clone, Debug)]
pub struct PhaseShiftModel {
    ctx: ModelContext,
}

impl PhaseShiftModel {
    pub fn new(ctx: ModelContext) -> Result<Self> {
        if ctx.search_box.dim() != 1 {
            return Err(Error::InvalidConfig("phaseshift needs a 1-d search box".into()));
        }
        if ctx.phase_components == 0 {
            return Err(Error::InvalidConfig("phaseshift needs at least one component".into()));
        }
        Ok(PhaseShiftModel { ctx })
    }
}

impl CachedGen for PhaseShiftModel {
    type Cache = (f64, f64);

    fn prepare(&self, x: &Input, z: &LatentSample) -> Result<(f64, f64)> {
        if x.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: x.dim() });
        }
        let p = PhaseShiftParams::from_latent(z)?;
        Ok((p.mean(x[0]), p.sigma2.sqrt()))
    }

    fn draw(&self, &(mean, sd): &(f64, f64), seed: Seed) -> Observation {
        Observation::new(mean + sd * seed.std_normal())
    }
}

impl Model for PhaseShiftModel {
    fn id(&self) -> String {
        "phaseshift".into()
    }

    fn infer(&self, data: &Dataset, seed: Seed) -> Result<PosteriorHandle> {
        Ok(self.infer_with_rates(data, seed)?.0)
    }

    fn infer_with_rates(&self, data: &Dataset, seed: Seed) -> Result<(PosteriorHandle, Vec<f64>)> {
        let k = self.ctx.phase_components;
        let (lo, hi) = self.ctx.search_box.bounds()[0];
        let y = data.objectives();
        let x: Vec<f64> = data.inputs().map(|v| v[0]).collect();
        let (mean_y, var_y) = data_scale(&y);
        let target = |t: &[f64]| {
            let p = PhaseShiftParams::from_slice(t);
            if p.mu.iter().any(|m| *m < lo || *m > hi) {
                return f64::NEG_INFINITY;
            }
            let mut lp = 0.0;
            for i in 0..k {
                lp += normal_logpdf(p.m[i], 0.0, priors::PHASE_MB_SD)
                    + normal_logpdf(p.b[i], 0.0, priors::PHASE_MB_SD)
                    + normal_logpdf(t[4 * i + 1], priors::PHASE_LOG_S_MEAN, priors::PHASE_LOG_S_SD);
            }
            lp += normal_logpdf(t[4 * k], priors::PHASE_LOG_SIGMA2_MEAN, priors::PHASE_LOG_SIGMA2_SD);
            let sd = p.sigma2.sqrt();
            lp + x.iter().zip(&y).map(|(xi, yi)| normal_logpdf(*yi, p.mean(*xi), sd)).sum::<f64>()
        };
        let init = PhaseShiftParams {
            m: vec![0.0; k],
            s: vec![priors::PHASE_LOG_S_MEAN.exp(); k],
            mu: (0..k).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / k as f64).collect(),
            b: vec![(mean_y / k as f64).clamp(-2.0, 2.0); k],
            sigma2: priors::PHASE_LOG_SIGMA2_MEAN.exp(),
        };
        let mut scales = Vec::with_capacity(4 * k + 1);
        for _ in 0..k {
            scales.extend([
                priors::PHASE_MB_SD,
                priors::PHASE_LOG_S_SD,
                (hi - lo) / 12f64.sqrt(),
                priors::PHASE_MB_SD.min(var_y.sqrt()),
            ]);
        }
        scales.push(priors::PHASE_LOG_SIGMA2_SD);
        let out = mh_infer(target, init.to_vec(), &scales, &self.ctx.mh, seed)?;
        let pool = out.pool.iter().map(|t| PhaseShiftParams::from_slice(t).to_latent()).collect();
        Ok((PosteriorHandle::pool(pool)?, vec![out.acceptance_rate]))
    }

    cached_model_ops!();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_midpoint_and_limits() {
        assert_eq!(logistic(1.5, 4.0, 3.0, 1.5), 2.0);
        assert_eq!(logistic(1.0, 4.0, 1e6, 0.0), 4.0);
        assert_eq!(logistic(-1.0, 4.0, 1e6, 0.0), 0.0);
    }

    #[test]
    fn single_component_midpoint() {
        let p = PhaseShiftParams { m: vec![2.0], s: vec![5.0], mu: vec![0.3], b: vec![0.0], sigma2: 1e-300 };
        let model = PhaseShiftModel::new(ModelContext::new(
            crate::search::SearchBox::cube(0.0, 1.0, 1).unwrap(),
        ))
        .unwrap();
        let y = model.gen(&Input::new(vec![0.3]).unwrap(), &p.to_latent(), Seed(1)).unwrap();
        assert!((y.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn params_roundtrip() {
        let p = PhaseShiftParams {
            m: vec![1.0, -2.0],
            s: vec![3.0, 0.5],
            mu: vec![0.2, 0.8],
            b: vec![0.1, 0.0],
            sigma2: 0.04,
        };
        let q = PhaseShiftParams::from_slice(&p.to_vec());
        assert!((q.mean(0.4) - p.mean(0.4)).abs() < 1e-12);
        assert_eq!(PhaseShiftParams::from_latent(&p.to_latent()).unwrap(), p);
    }

    #[test]
    fn multi_d_box_rejected() {
        let ctx = ModelContext::new(crate::search::SearchBox::cube(0.0, 1.0, 2).unwrap());
        assert!(PhaseShiftModel::new(ctx).is_err());
    }
}
