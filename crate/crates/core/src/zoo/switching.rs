//! Switching model: an input-dependent classifier picks between a GP
//! component (state 1) and a Gaussian component (state 0).
//!
//! Observed state labels split the likelihood into three independent
//! factors (classifier, GP on state-1 points, Gaussian on state-0 points),
//! so `infer` runs one chain per factor and zips the pools.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::gp::{dataset_xy, fit_of, sample_gp_fits};
use super::mh::mh_infer;
use super::{cached_model_ops, data_scale, priors, CachedGen, ModelContext};
use crate::data::{AuxKey, AuxValue, Dataset, Input, Observation};
use crate::error::{Error, Result};
use crate::model::{LatentSample, Model, PosteriorHandle};
use crate::search::SearchBox;
use crate::seed::Seed;
use crate::stats::{log_sigmoid, normal_logpdf, sigmoid};

/// Features `(1, u_j, u_j^2)` of box-normalized coordinates `u`.
pub fn features(x: &[f64], search_box: &SearchBox) -> Vec<f64> {
    let mut f = Vec::with_capacity(1 + 2 * x.len());
    f.push(1.0);
    for (j, &v) in x.iter().enumerate() {
        let u = (v - search_box.bounds()[j].0) / search_box.width(j);
        f.extend([u, u * u]);
    }
    f
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Everything `gen` needs at one input for one latent sample.
#[derive(Clone, Copy, Debug)]
pub struct SwitchMoments {
    /// Probability of state 1.
    pub p1: f64,
    pub mean1: f64,
    pub var1: f64,
    pub mean0: f64,
    pub var0: f64,
}

/// Switching model, id `"switching"`.
#[derive(Clone, Debug)]
pub struct SwitchingModel {
    ctx: ModelContext,
}

impl SwitchingModel {
    pub fn new(ctx: ModelContext) -> Self {
        SwitchingModel { ctx }
    }

    pub fn moments(&self, x: &Input, z: &LatentSample) -> Result<SwitchMoments> {
        let w = z.get("w")?;
        let phi = features(x.coords(), &self.ctx.search_box);
        if w.len() != phi.len() {
            return Err(Error::DimensionMismatch { expected: w.len(), got: phi.len() });
        }
        let fit = fit_of(z, "switching")?;
        let (mean1, var1) = fit.predict(x.coords());
        Ok(SwitchMoments {
            p1: sigmoid(dot(w, &phi)),
            mean1,
            var1,
            mean0: z.scalar("mean0")?,
            var0: z.scalar("log_var0")?.exp(),
        })
    }
}

fn states(data: &Dataset) -> Result<Vec<bool>> {
    data.observations()
        .map(|y| match y.aux_int(AuxKey::State) {
            Some(s) => Ok(s != 0),
            None => Err(Error::InvalidInput("switching model needs state labels".into())),
        })
        .collect()
}

impl CachedGen for SwitchingModel {
    type Cache = SwitchMoments;

    fn prepare(&self, x: &Input, z: &LatentSample) -> Result<SwitchMoments> {
        self.moments(x, z)
    }

    fn draw(&self, c: &SwitchMoments, seed: Seed) -> Observation {
        let mut rng = seed.rng();
        let state1 = rng.random::<f64>() < c.p1;
        let e: f64 = StandardNormal.sample(&mut rng);
        let (mean, var) = if state1 { (c.mean1, c.var1) } else { (c.mean0, c.var0) };
        Observation::new(mean + var.sqrt() * e).with(AuxKey::State, AuxValue::Int(state1 as i64))
    }
}

impl Model for SwitchingModel {
    fn id(&self) -> String {
        "switching".into()
    }

    fn infer(&self, data: &Dataset, seed: Seed) -> Result<PosteriorHandle> {
        Ok(self.infer_with_rates(data, seed)?.0)
    }

    fn infer_with_rates(&self, data: &Dataset, seed: Seed) -> Result<(PosteriorHandle, Vec<f64>)> {
        let bx = &self.ctx.search_box;
        let labels = states(data)?;
        let (x, y) = dataset_xy(data);

        let phis: Vec<Vec<f64>> = x.iter().map(|v| features(v, bx)).collect();
        let nw = 1 + 2 * bx.dim();
        let classifier = |w: &[f64]| {
            let prior: f64 = w.iter().map(|v| normal_logpdf(*v, 0.0, priors::SWITCH_WEIGHT_SD)).sum();
            prior
                + phis
                    .iter()
                    .zip(&labels)
                    .map(|(phi, &s)| {
                        let t = dot(w, phi);
                        if s {
                            log_sigmoid(t)
                        } else {
                            log_sigmoid(-t)
                        }
                    })
                    .sum::<f64>()
        };
        let w_out = mh_infer(
            classifier,
            vec![0.0; nw],
            &vec![priors::SWITCH_WEIGHT_SD; nw],
            &self.ctx.mh,
            seed.derive(&[1]),
        )?;

        let (x1, y1): (Vec<Vec<f64>>, Vec<f64>) = x
            .iter()
            .zip(&y)
            .zip(&labels)
            .filter(|(_, &s)| s)
            .map(|((xi, yi), _)| (xi.clone(), *yi))
            .unzip();
        let (fits, gp_rate) = sample_gp_fits(&self.ctx, &x1, &y1, seed.derive(&[2]))?;

        let y0: Vec<f64> = y.iter().zip(&labels).filter(|(_, &s)| !s).map(|(v, _)| *v).collect();
        let (mean_all, var_all) = data_scale(&y);
        let lv_center = var_all.ln() + priors::SWITCH_LOG_VAR_OFFSET;
        let gauss = |t: &[f64]| {
            let sd = (0.5 * t[1]).exp();
            normal_logpdf(t[0], mean_all, var_all.sqrt())
                + normal_logpdf(t[1], lv_center, priors::SWITCH_LOG_VAR_SD)
                + y0.iter().map(|v| normal_logpdf(*v, t[0], sd)).sum::<f64>()
        };
        let init0 = if y0.is_empty() { mean_all } else { y0.iter().sum::<f64>() / y0.len() as f64 };
        let g_out = mh_infer(
            gauss,
            vec![init0, lv_center],
            &[var_all.sqrt(), priors::SWITCH_LOG_VAR_SD],
            &self.ctx.mh,
            seed.derive(&[3]),
        )?;

        let n = w_out.pool.len().min(fits.len()).min(g_out.pool.len());
        let pool = (0..n)
            .map(|i| {
                let fit = fits[i].clone();
                fit.hyper()
                    .write_latent("gp/", LatentSample::builder())
                    .vector("w", w_out.pool[i].clone())
                    .scalar("mean0", g_out.pool[i][0])
                    .scalar("log_var0", g_out.pool[i][1])
                    .build()
                    .with_attachment(fit)
            })
            .collect();
        Ok((PosteriorHandle::pool(pool)?, vec![w_out.acceptance_rate, gp_rate, g_out.acceptance_rate]))
    }

    cached_model_ops!();
}
