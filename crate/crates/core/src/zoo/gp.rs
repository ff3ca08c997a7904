//! Exact Gaussian-process regression with MH over the hyperparameters.
//!
//! Squared-exponential ARD kernel, constant mean, Gaussian noise. `infer`
//! samples hyperparameters from their posterior under the marginal
//! likelihood; each pooled sample carries its Cholesky factorization so
//! `gen` is a triangular solve.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::mh::mh_infer;
use super::{cached_model_ops, data_scale, priors, CachedGen, ModelContext};
use crate::data::{Dataset, Input, Observation};
use crate::error::{Error, Result};
use crate::model::{LatentSample, Model, PosteriorHandle};
use crate::search::SearchBox;
use crate::seed::Seed;
use crate::stats::normal_logpdf;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const MAX_JITTER: f64 = 1e-4;

/// GP hyperparameters in their unconstrained parameterization.
#[derive(Clone, Debug, PartialEq)]
pub struct GpHyper {
    pub log_ls: Vec<f64>,
    pub log_sf2: f64,
    pub log_sn2: f64,
    pub m0: f64,
}

impl GpHyper {
    pub fn dim(&self) -> usize {
        self.log_ls.len()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_ls.iter().map(|l| l.exp()).collect()
    }

    pub fn sf2(&self) -> f64 {
        self.log_sf2.exp()
    }

    pub fn sn2(&self) -> f64 {
        self.log_sn2.exp()
    }

    /// Packed as `[log_ls.., log_sf2, log_sn2, m0]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_ls.clone();
        v.extend([self.log_sf2, self.log_sn2, self.m0]);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let d = v.len() - 3;
        GpHyper { log_ls: v[..d].to_vec(), log_sf2: v[d], log_sn2: v[d + 1], m0: v[d + 2] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }

    pub(crate) fn write_latent(&self, prefix: &str, b: crate::model::LatentBuilder) -> crate::model::LatentBuilder {
        b.vector(&format!("{prefix}log_ls"), self.log_ls.clone())
            .scalar(&format!("{prefix}log_sf2"), self.log_sf2)
            .scalar(&format!("{prefix}log_sn2"), self.log_sn2)
            .scalar(&format!("{prefix}m0"), self.m0)
    }

    pub fn to_latent(&self) -> LatentSample {
        self.write_latent("", LatentSample::builder()).build()
    }

    pub fn from_latent(z: &LatentSample, prefix: &str) -> Result<Self> {
        Ok(GpHyper {
            log_ls: z.get(&format!("{prefix}log_ls"))?.to_vec(),
            log_sf2: z.scalar(&format!("{prefix}log_sf2"))?,
            log_sn2: z.scalar(&format!("{prefix}log_sn2"))?,
            m0: z.scalar(&format!("{prefix}m0"))?,
        })
    }
}

/// `sf2 * exp(-sum_j (a_j - b_j)^2 / (2 ls_j^2))`.
#[inline]
pub fn se_kernel(a: &[f64], b: &[f64], ls: &[f64], sf2: f64) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| {
            let t = (x - y) / l;
            t * t
        })
        .sum();
    sf2 * (-0.5 * s).exp()
}

/// Cholesky factor of `cov`, adding diagonal jitter from `1e-10` up to
/// `1e-4` times the mean diagonal if needed. Returns the jitter used.
pub fn jittered_cholesky(cov: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = cov.nrows();
    let scale = if n == 0 { 1.0 } else { (cov.trace() / n as f64).abs().max(1e-300) };
    let mut jitter = 1e-10 * scale;
    let mut k = cov;
    let mut added = 0.0;
    loop {
        for i in 0..n {
            k[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Some(chol) = k.clone().cholesky() {
            return Ok((chol, jitter));
        }
        if jitter * 10.0 > MAX_JITTER * scale * (1.0 + 1e-9) {
            return Err(Error::Factorization { jitter });
        }
        jitter *= 10.0;
    }
}

/// Cholesky factorization of a covariance with a fixed residual vector.
#[derive(Clone, Debug)]
pub struct CholFit {
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    log_det: f64,
    quad: f64,
    jitter: f64,
}

impl CholFit {
    /// Factorizes `cov` via [`jittered_cholesky`].
    pub fn new(cov: DMatrix<f64>, resid: &[f64]) -> Result<Self> {
        let n = cov.nrows();
        debug_assert_eq!(n, resid.len());
        let (chol, jitter) = jittered_cholesky(cov)?;
        let r = DVector::from_column_slice(resid);
        let alpha = chol.solve(&r);
        let l = chol.unpack();
        let log_det = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        let quad = r.dot(&alpha);
        Ok(CholFit { l, alpha, log_det, quad, jitter })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Gaussian log likelihood of the residual.
    pub fn log_marginal(&self) -> f64 {
        -0.5 * self.quad - 0.5 * self.log_det - 0.5 * self.len() as f64 * LN_2PI
    }

    /// `(cross . alpha, prior_var - |L^-1 cross|^2)`, variance clamped at 0.
    pub fn condition(&self, cross: &[f64], prior_var: f64) -> (f64, f64) {
        let n = self.len();
        let mut v = vec![0.0; n];
        let mut vv = 0.0;
        for i in 0..n {
            let mut acc = cross[i];
            for (j, vj) in v.iter().enumerate().take(i) {
                acc -= self.l[(i, j)] * vj;
            }
            let vi = acc / self.l[(i, i)];
            v[i] = vi;
            vv += vi * vi;
        }
        let shift = cross.iter().zip(self.alpha.iter()).map(|(c, a)| c * a).sum();
        (shift, (prior_var - vv).max(0.0))
    }

    pub fn alpha(&self) -> &[f64] {
        self.alpha.as_slice()
    }
}

/// Per-dimension squared input differences, computed once per dataset.
#[derive(Clone, Debug)]
pub struct SqDists {
    n: usize,
    d: usize,
    /// `[(i * n + j) * d + k]`
    data: Vec<f64>,
}

impl SqDists {
    pub fn new(x: &[Vec<f64>]) -> Self {
        let n = x.len();
        let d = x.first().map_or(0, Vec::len);
        let mut data = vec![0.0; n * n * d];
        for i in 0..n {
            for j in 0..n {
                for k in 0..d {
                    let t = x[i][k] - x[j][k];
                    data[(i * n + j) * d + k] = t * t;
                }
            }
        }
        SqDists { n, d, data }
    }

    /// SE kernel matrix plus `sn2` on the diagonal.
    pub fn kernel(&self, ls: &[f64], sf2: f64, sn2: f64) -> DMatrix<f64> {
        let inv: Vec<f64> = ls.iter().map(|l| 0.5 / (l * l)).collect();
        let mut k = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            k[(i, i)] = sf2 + sn2;
            for j in 0..i {
                let base = (i * self.n + j) * self.d;
                let s: f64 = (0..self.d).map(|t| self.data[base + t] * inv[t]).sum();
                let v = sf2 * (-s).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

/// A GP conditioned on training data under fixed hyperparameters.
#[derive(Clone, Debug)]
pub struct GpFit {
    hyper: GpHyper,
    ls: Vec<f64>,
    x: Vec<Vec<f64>>,
    fit: CholFit,
}

impl GpFit {
    pub fn new(x: Vec<Vec<f64>>, y: &[f64], hyper: &GpHyper) -> Result<Self> {
        Self::with_dists(&SqDists::new(&x), x, y, hyper)
    }

    fn with_dists(dists: &SqDists, x: Vec<Vec<f64>>, y: &[f64], hyper: &GpHyper) -> Result<Self> {
        let ls = hyper.lengthscales();
        let k = dists.kernel(&ls, hyper.sf2(), hyper.sn2());
        let resid: Vec<f64> = y.iter().map(|v| v - hyper.m0).collect();
        let fit = CholFit::new(k, &resid)?;
        Ok(GpFit { hyper: hyper.clone(), ls, x, fit })
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.hyper
    }

    pub fn log_marginal(&self) -> f64 {
        self.fit.log_marginal()
    }

    /// Mean and variance of the latent function at `x`.
    pub fn predict_latent(&self, x: &[f64]) -> (f64, f64) {
        let sf2 = self.hyper.sf2();
        let cross: Vec<f64> = self.x.iter().map(|xi| se_kernel(x, xi, &self.ls, sf2)).collect();
        let (shift, var) = self.fit.condition(&cross, sf2);
        (self.hyper.m0 + shift, var)
    }

    /// Mean and variance of a new noisy observation at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_latent(x);
        (m, v + self.hyper.sn2())
    }
}

/// Log marginal likelihood, `-inf` when factorization fails.
pub fn gp_log_marginal(dists: &SqDists, y: &[f64], hyper: &GpHyper) -> f64 {
    let k = dists.kernel(&hyper.lengthscales(), hyper.sf2(), hyper.sn2());
    let resid: Vec<f64> = y.iter().map(|v| v - hyper.m0).collect();
    CholFit::new(k, &resid).map_or(f64::NEG_INFINITY, |f| f.log_marginal())
}

/// Weakly informative, data-scaled hyperprior.
#[derive(Clone, Debug, PartialEq)]
pub struct GpPrior {
    pub log_ls_center: Vec<f64>,
    pub log_sf2_center: f64,
    pub log_sn2_center: f64,
    pub m0_center: f64,
    pub m0_sd: f64,
}

impl GpPrior {
    pub fn from_data(search_box: &SearchBox, y: &[f64]) -> Self {
        let (mean, var) = data_scale(y);
        GpPrior {
            log_ls_center: (0..search_box.dim())
                .map(|j| (priors::GP_LENGTHSCALE_FRACTION * search_box.width(j)).ln())
                .collect(),
            log_sf2_center: var.ln(),
            log_sn2_center: (priors::GP_NOISE_FRACTION * var).ln(),
            m0_center: mean,
            m0_sd: var.sqrt(),
        }
    }

    pub fn center(&self) -> GpHyper {
        GpHyper {
            log_ls: self.log_ls_center.clone(),
            log_sf2: self.log_sf2_center,
            log_sn2: self.log_sn2_center,
            m0: self.m0_center,
        }
    }

    /// Prior scale of each packed parameter.
    pub fn scales(&self) -> Vec<f64> {
        let sd = priors::GP_LOG_HYPER_SD;
        let mut s = vec![sd; self.log_ls_center.len()];
        s.extend([sd, sd, self.m0_sd]);
        s
    }

    pub fn log_density(&self, h: &GpHyper) -> f64 {
        let sd = priors::GP_LOG_HYPER_SD;
        let ls: f64 = h
            .log_ls
            .iter()
            .zip(&self.log_ls_center)
            .map(|(v, c)| normal_logpdf(*v, *c, sd))
            .sum();
        ls + normal_logpdf(h.log_sf2, self.log_sf2_center, sd)
            + normal_logpdf(h.log_sn2, self.log_sn2_center, sd)
            + normal_logpdf(h.m0, self.m0_center, self.m0_sd)
    }
}

/// Runs MH over GP hyperparameters for `(x, y)` and returns fitted samples.
pub(crate) fn sample_gp_fits(
    ctx: &ModelContext,
    x: &[Vec<f64>],
    y: &[f64],
    seed: Seed,
) -> Result<(Vec<GpFit>, f64)> {
    let prior = GpPrior::from_data(&ctx.search_box, y);
    let dists = SqDists::new(x);
    let target = |t: &[f64]| {
        let h = GpHyper::from_slice(t);
        let lp = prior.log_density(&h);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp + gp_log_marginal(&dists, y, &h)
    };
    let out = mh_infer(target, prior.center().to_vec(), &prior.scales(), &ctx.mh, seed)?;
    let fits = out
        .pool
        .iter()
        .map(|t| GpFit::with_dists(&dists, x.to_vec(), y, &GpHyper::from_slice(t)))
        .collect::<Result<Vec<_>>>()?;
    Ok((fits, out.acceptance_rate))
}

/// Fits carried by GP-family latent samples.
pub(crate) fn fit_of<'a>(z: &'a LatentSample, what: &str) -> Result<&'a GpFit> {
    z.attachment::<GpFit>()
        .ok_or_else(|| Error::HandleMismatch(format!("{what} sample has no GP fit attached")))
}

pub(crate) fn dataset_xy(data: &Dataset) -> (Vec<Vec<f64>>, Vec<f64>) {
    data.pairs().iter().map(|(x, y)| (x.coords().to_vec(), y.objective)).unzip()
}

/// Plain GP regression model, id `"gp"`.
#[derive(Clone, Debug)]
pub struct GpModel {
    ctx: ModelContext,
}

impl GpModel {
    pub fn new(ctx: ModelContext) -> Self {
        GpModel { ctx }
    }

    /// Predictive mean and variance of `y` at `x` under sample `z`.
    pub fn moments(&self, x: &Input, z: &LatentSample) -> Result<(f64, f64)> {
        match z.attachment::<GpFit>() {
            Some(fit) => Ok(fit.predict(x.coords())),
            None => {
                // bare hyperparameters: prior predictive
                let h = GpHyper::from_latent(z, "")?;
                Ok((h.m0, h.sf2() + h.sn2()))
            }
        }
    }
}

impl CachedGen for GpModel {
    type Cache = (f64, f64);

    fn prepare(&self, x: &Input, z: &LatentSample) -> Result<(f64, f64)> {
        self.moments(x, z)
    }

    fn draw(&self, &(mean, var): &(f64, f64), seed: Seed) -> Observation {
        Observation::new(mean + var.sqrt() * seed.std_normal())
    }
}

impl Model for GpModel {
    fn id(&self) -> String {
        "gp".into()
    }

    fn infer(&self, data: &Dataset, seed: Seed) -> Result<PosteriorHandle> {
        Ok(self.infer_with_rates(data, seed)?.0)
    }

    fn infer_with_rates(&self, data: &Dataset, seed: Seed) -> Result<(PosteriorHandle, Vec<f64>)> {
        let (x, y) = dataset_xy(data);
        let (fits, rate) = sample_gp_fits(&self.ctx, &x, &y, seed)?;
        let pool = fits.into_iter().map(|f| f.hyper().to_latent().with_attachment(f)).collect();
        Ok((PosteriorHandle::pool(pool)?, vec![rate]))
    }

    cached_model_ops!();
}
