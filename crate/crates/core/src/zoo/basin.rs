//! Basin model: a two-sided ReLU surface around an inflection point.

use super::mh::mh_infer;
use super::{cached_model_ops, data_scale, priors, CachedGen, ModelContext};
use crate::data::{Dataset, Input, Observation};
use crate::error::{Error, Result};
use crate::model::{LatentSample, Model, PosteriorHandle};
use crate::seed::Seed;
use crate::stats::normal_logpdf;

/// `a . ReLU(x) + b . ReLU(-x)`.
pub fn basin_r(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    x.iter()
        .zip(a)
        .zip(b)
        .map(|((&v, &ai), &bi)| if v > 0.0 { ai * v } else { -bi * v })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasinParams {
    pub mu: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
    pub sigma2: f64,
}

impl BasinParams {
    pub fn new(mu: Vec<f64>, a: Vec<f64>, b: Vec<f64>, c: f64, sigma2: f64) -> Result<Self> {
        let d = mu.len();
        if a.len() != d || b.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: a.len().min(b.len()) });
        }
        if a.iter().chain(&b).any(|v| !(*v > 0.0)) || !(sigma2 > 0.0) {
            return Err(Error::InvalidInput("basin slopes and variance must be positive".into()));
        }
        Ok(BasinParams { mu, a, b, c, sigma2 })
    }

    /// Noise-free response `R(x - mu; a, b) + c`.
    pub fn mean(&self, x: &[f64]) -> f64 {
        let shifted: Vec<f64> = x.iter().zip(&self.mu).map(|(v, m)| v - m).collect();
        basin_r(&shifted, &self.a, &self.b) + self.c
    }

    /// Packed as `[mu.., ln a.., ln b.., c, ln sigma2]`.
    fn to_vec(&self) -> Vec<f64> {
        let mut v = self.mu.clone();
        v.extend(self.a.iter().map(|x| x.ln()));
        v.extend(self.b.iter().map(|x| x.ln()));
        v.extend([self.c, self.sigma2.ln()]);
        v
    }

    fn from_slice(t: &[f64]) -> Self {
        let d = (t.len() - 2) / 3;
        BasinParams {
            mu: t[..d].to_vec(),
            a: t[d..2 * d].iter().map(|v| v.exp()).collect(),
            b: t[2 * d..3 * d].iter().map(|v| v.exp()).collect(),
            c: t[3 * d],
            sigma2: t[3 * d + 1].exp(),
        }
    }

    pub fn to_latent(&self) -> LatentSample {
        LatentSample::builder()
            .vector("mu", self.mu.clone())
            .vector("a", self.a.clone())
            .vector("b", self.b.clone())
            .scalar("c", self.c)
            .scalar("sigma2", self.sigma2)
            .build()
    }

    pub fn from_latent(z: &LatentSample) -> Result<Self> {
        Ok(BasinParams {
            mu: z.get("mu")?.to_vec(),
            a: z.get("a")?.to_vec(),
            b: z.get("b")?.to_vec(),
            c: z.scalar("c")?,
            sigma2: z.scalar("sigma2")?,
        })
    }
}

/// Basin regression model, id `"basin"`.
#[derive(Clone, Debug)]
pub struct BasinModel {
    ctx: ModelContext,
}

impl BasinModel {
    pub fn new(ctx: ModelContext) -> Self {
        BasinModel { ctx }
    }
}

impl CachedGen for BasinModel {
    type Cache = (f64, f64);

    fn prepare(&self, x: &Input, z: &LatentSample) -> Result<(f64, f64)> {
        let p = BasinParams::from_latent(z)?;
        if p.mu.len() != x.dim() {
            return Err(Error::DimensionMismatch { expected: p.mu.len(), got: x.dim() });
        }
        Ok((p.mean(x.coords()), p.sigma2.sqrt()))
    }

    fn draw(&self, &(mean, sd): &(f64, f64), seed: Seed) -> Observation {
        Observation::new(mean + sd * seed.std_normal())
    }
}

impl Model for BasinModel {
    fn id(&self) -> String {
        "basin".into()
    }

    fn infer(&self, data: &Dataset, seed: Seed) -> Result<PosteriorHandle> {
        Ok(self.infer_with_rates(data, seed)?.0)
    }

    fn infer_with_rates(&self, data: &Dataset, seed: Seed) -> Result<(PosteriorHandle, Vec<f64>)> {
        let bx = &self.ctx.search_box;
        let d = bx.dim();
        let y = data.objectives();
        let xs: Vec<&[f64]> = data.inputs().map(Input::coords).collect();
        let (mean_y, var_y) = data_scale(&y);
        let sd_y = var_y.sqrt();
        let target = |t: &[f64]| {
            let p = BasinParams::from_slice(t);
            if p.mu.iter().zip(bx.bounds()).any(|(m, (lo, hi))| m < lo || m > hi) {
                return f64::NEG_INFINITY;
            }
            let mut lp: f64 = t[d..3 * d]
                .iter()
                .map(|v| normal_logpdf(*v, 0.0, priors::BASIN_LOG_AB_SD))
                .sum();
            lp += normal_logpdf(p.c, mean_y, sd_y);
            lp += normal_logpdf(t[3 * d + 1], priors::BASIN_LOG_SIGMA2_MEAN, priors::BASIN_LOG_SIGMA2_SD);
            let sd = p.sigma2.sqrt();
            lp + xs.iter().zip(&y).map(|(x, yi)| normal_logpdf(*yi, p.mean(x), sd)).sum::<f64>()
        };
        // start at the best observation, which sits nearest the basin floor
        let best = y
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);
        let mu0 = best.map_or_else(|| bx.center().into_vec(), |i| xs[i].to_vec());
        let c0 = best.map_or(mean_y, |i| y[i]);
        let init = BasinParams {
            mu: mu0,
            a: vec![1.0; d],
            b: vec![1.0; d],
            c: c0,
            sigma2: priors::BASIN_LOG_SIGMA2_MEAN.exp(),
        };
        let mut scales: Vec<f64> = (0..d).map(|j| bx.width(j) / 12f64.sqrt()).collect();
        scales.extend(vec![priors::BASIN_LOG_AB_SD; 2 * d]);
        scales.extend([sd_y, priors::BASIN_LOG_SIGMA2_SD]);
        let out = mh_infer(target, init.to_vec(), &scales, &self.ctx.mh, seed)?;
        let pool = out.pool.iter().map(|t| BasinParams::from_slice(t).to_latent()).collect();
        Ok((PosteriorHandle::pool(pool)?, vec![out.acceptance_rate]))
    }

    cached_model_ops!();
}
