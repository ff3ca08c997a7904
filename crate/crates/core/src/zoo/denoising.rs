//! Denoising GP: a GP system model mixed with a uniform contamination
//! component, `y ~ (1 - w_c) GP(y | x) + w_c Uniform(lo, hi)`.
//!
//! `infer` is Metropolis-within-Gibbs over per-point contamination
//! indicators: random-walk MH on the GP hyperparameters given the clean
//! subset, a conjugate Beta draw of `w_c`, and an exact sweep over the
//! indicators using leave-one-out GP predictives. The contamination
//! interval is fixed to the observed data range.

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use super::gp::{dataset_xy, fit_of, gp_log_marginal, jittered_cholesky, se_kernel, GpFit, GpHyper, GpPrior, SqDists};
use super::mh::{cap_pool, RwmChain};
use super::{cached_model_ops, priors, CachedGen, ModelContext};
use crate::data::{Dataset, Input, Observation};
use crate::error::{Error, Result};
use crate::model::{LatentSample, Model, PosteriorHandle};
use crate::seed::Seed;
use crate::stats::normal_pdf;

/// Indicator sweeps run once per this many hyperparameter steps.
const SWEEP_EVERY: usize = 2;

/// Per-input quantities for `gen` and the mixture density.
#[derive(Clone, Copy, Debug)]
pub struct DenoiseMoments {
    pub w_c: f64,
    pub lo: f64,
    pub hi: f64,
    /// Predictive mean and variance of the system component.
    pub mean: f64,
    pub var: f64,
}

impl DenoiseMoments {
    /// Mixture density of `y`.
    pub fn density(&self, y: f64) -> f64 {
        let uniform = if y >= self.lo && y <= self.hi { 1.0 / (self.hi - self.lo) } else { 0.0 };
        (1.0 - self.w_c) * normal_pdf(y, self.mean, self.var.sqrt()) + self.w_c * uniform
    }
}

/// Denoising GP model, id `"denoising_gp"`.
#[derive(Clone, Debug)]
pub struct DenoisingGpModel {
    ctx: ModelContext,
}

impl DenoisingGpModel {
    pub fn new(ctx: ModelContext) -> Self {
        DenoisingGpModel { ctx }
    }

    pub fn moments(&self, x: &Input, z: &LatentSample) -> Result<DenoiseMoments> {
        let fit = fit_of(z, "denoising")?;
        let (mean, var) = fit.predict(x.coords());
        Ok(DenoiseMoments {
            w_c: z.scalar("w_c")?,
            lo: z.scalar("contam_lo")?,
            hi: z.scalar("contam_hi")?,
            mean,
            var,
        })
    }

    /// Posterior mean of the clean latent function at `x`, averaged over
    /// the pool.
    pub fn clean_mean(&self, x: &Input, handle: &PosteriorHandle) -> Result<f64> {
        let pool = handle
            .samples()
            .ok_or_else(|| Error::HandleMismatch("expected a sample pool".into()))?;
        let mut acc = 0.0;
        for z in pool {
            let fit = fit_of(z, "denoising")?;
            acc += fit.predict_latent(x.coords()).0;
        }
        Ok(acc / pool.len() as f64)
    }
}

/// Contamination interval: the observed range, widened if degenerate.
fn contamination_range(y: &[f64]) -> (f64, f64) {
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || hi - lo < 1e-9 {
        let c = if lo.is_finite() { lo } else { 0.0 };
        return (c - 0.5, c + 0.5);
    }
    (lo, hi)
}

/// Sampler state tied to the current clean subset.
struct CleanSet {
    idx: Vec<usize>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    dists: SqDists,
}

impl CleanSet {
    fn new(contaminated: &[bool], x: &[Vec<f64>], y: &[f64]) -> Self {
        let idx: Vec<usize> = (0..y.len()).filter(|&i| !contaminated[i]).collect();
        let xs: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let ys = idx.iter().map(|&i| y[i]).collect();
        let dists = SqDists::new(&xs);
        CleanSet { idx, x: xs, y: ys, dists }
    }

    fn log_marginal(&self, h: &GpHyper) -> f64 {
        gp_log_marginal(&self.dists, &self.y, h)
    }
}

/// Predictive mean and variance of each `y_i` given the clean points other
/// than `i`, under hyperparameters `h`.
fn loo_predictives(clean: &CleanSet, x: &[Vec<f64>], h: &GpHyper) -> Result<Vec<(f64, f64)>> {
    let n = x.len();
    let ls = h.lengthscales();
    let (sf2, sn2) = (h.sf2(), h.sn2());
    if clean.idx.is_empty() {
        return Ok(vec![(h.m0, sf2 + sn2); n]);
    }
    let k = clean.dists.kernel(&ls, sf2, sn2);
    let (chol, _) = jittered_cholesky(k)?;
    let inv = chol.inverse();
    let r = nalgebra::DVector::from_iterator(clean.y.len(), clean.y.iter().map(|v| v - h.m0));
    let a = &inv * &r;
    let mut pos = vec![usize::MAX; n];
    for (p, &i) in clean.idx.iter().enumerate() {
        pos[i] = p;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if pos[i] != usize::MAX {
            let p = pos[i];
            let ipp = inv[(p, p)];
            out.push((clean.y[p] - a[p] / ipp, 1.0 / ipp));
        } else {
            let cross = nalgebra::DVector::from_iterator(
                clean.x.len(),
                clean.x.iter().map(|xc| se_kernel(&x[i], xc, &ls, sf2)),
            );
            let mean = h.m0 + cross.dot(&a);
            let var = (sf2 + sn2 - cross.dot(&(&inv * &cross))).max(1e-12 * (sf2 + sn2));
            out.push((mean, var));
        }
    }
    Ok(out)
}

struct Draw {
    theta: Vec<f64>,
    w_c: f64,
    contaminated: Vec<bool>,
}

impl CachedGen for DenoisingGpModel {
    type Cache = DenoiseMoments;

    fn prepare(&self, x: &Input, z: &LatentSample) -> Result<DenoiseMoments> {
        self.moments(x, z)
    }

    fn draw(&self, c: &DenoiseMoments, seed: Seed) -> Observation {
        let mut rng = seed.rng();
        if rng.random::<f64>() < c.w_c {
            Observation::new(c.lo + (c.hi - c.lo) * rng.random::<f64>())
        } else {
            let e: f64 = StandardNormal.sample(&mut rng);
            Observation::new(c.mean + c.var.sqrt() * e)
        }
    }
}

impl Model for DenoisingGpModel {
    fn id(&self) -> String {
        "denoising_gp".into()
    }

    fn infer(&self, data: &Dataset, seed: Seed) -> Result<PosteriorHandle> {
        Ok(self.infer_with_rates(data, seed)?.0)
    }

    fn infer_with_rates(&self, data: &Dataset, seed: Seed) -> Result<(PosteriorHandle, Vec<f64>)> {
        let cfg = &self.ctx.mh;
        cfg.validate()?;
        let (x, y) = dataset_xy(data);
        let n = y.len();
        let (lo, hi) = contamination_range(&y);
        let log_u = -(hi - lo).ln();
        let prior = GpPrior::from_data(&self.ctx.search_box, &y);

        let mut rng = seed.rng();
        let mut contaminated = vec![false; n];
        let mut clean = CleanSet::new(&contaminated, &x, &y);
        let mut w_c = priors::DENOISE_WC_ALPHA / (priors::DENOISE_WC_ALPHA + priors::DENOISE_WC_BETA);
        let log_post = |t: &[f64], clean: &CleanSet| {
            let h = GpHyper::from_slice(t);
            let lp = prior.log_density(&h);
            if lp.is_finite() {
                lp + clean.log_marginal(&h)
            } else {
                lp
            }
        };
        let init = prior.center().to_vec();
        let lp0 = log_post(&init, &clean);
        let scales: Vec<f64> = prior.scales().iter().map(|s| s * cfg.initial_scale).collect();
        let mut chain = RwmChain::new(init, lp0, scales, cfg.target_accept)?;

        let burn = cfg.burn_in_steps();
        let mut pool = Vec::new();
        let mut accepted_any = false;
        for t in 0..cfg.steps {
            if t == burn {
                accepted_any |= chain.accepted() > 0;
                chain.reset_counts();
            }
            chain.step(&mut |th: &[f64]| log_post(th, &clean), &mut rng, t < burn);

            if t % SWEEP_EVERY == 0 {
                let k = contaminated.iter().filter(|&&c| c).count() as f64;
                let beta = Beta::new(
                    priors::DENOISE_WC_ALPHA + k,
                    priors::DENOISE_WC_BETA + n as f64 - k,
                )
                .map_err(|e| Error::Inference(e.to_string()))?;
                w_c = beta.sample(&mut rng);
                let h = GpHyper::from_slice(chain.theta());
                let mut changed = false;
                let mut loo = loo_predictives(&clean, &x, &h)?;
                for i in 0..n {
                    let (mean, var) = loo[i];
                    let p_clean = (1.0 - w_c) * normal_pdf(y[i], mean, var.sqrt());
                    let p_contam = w_c * log_u.exp();
                    let total = p_clean + p_contam;
                    let prob = if total > 0.0 { p_contam / total } else { 0.5 };
                    let c = rng.random::<f64>() < prob;
                    if c != contaminated[i] {
                        contaminated[i] = c;
                        clean = CleanSet::new(&contaminated, &x, &y);
                        loo = loo_predictives(&clean, &x, &h)?;
                        changed = true;
                    }
                }
                if changed {
                    chain.refresh(log_post(chain.theta(), &clean));
                }
            }

            if t >= burn && (t - burn + 1) % cfg.thin == 0 {
                pool.push(Draw { theta: chain.theta().to_vec(), w_c, contaminated: contaminated.clone() });
            }
        }
        accepted_any |= chain.accepted() > 0;
        let rate = chain.accepted() as f64 / chain.proposed().max(1) as f64;
        if !accepted_any {
            return Err(Error::Inference("no proposal was ever accepted".into()));
        }
        let pool = cap_pool(pool, cfg.pool_cap, &mut rng);
        let samples = pool
            .into_iter()
            .map(|d| {
                let h = GpHyper::from_slice(&d.theta);
                let cs = CleanSet::new(&d.contaminated, &x, &y);
                let fit = GpFit::new(cs.x, &cs.y, &h)?;
                Ok(h.write_latent("", LatentSample::builder())
                    .scalar("w_c", d.w_c)
                    .scalar("contam_lo", lo)
                    .scalar("contam_hi", hi)
                    .build()
                    .with_attachment(fit))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((PosteriorHandle::pool(samples)?, vec![rate]))
    }

    cached_model_ops!();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::SearchBox;

    fn model() -> DenoisingGpModel {
        DenoisingGpModel::new(ModelContext::new(SearchBox::cube(-1.0, 1.0, 1).unwrap()))
    }

    fn latent(w_c: f64) -> LatentSample {
        let h = GpHyper { log_ls: vec![0.0], log_sf2: 0.0, log_sn2: -2.0, m0: 0.0 };
        let fit = GpFit::new(vec![vec![0.0]], &[1.0], &h).unwrap();
        h.write_latent("", LatentSample::builder())
            .scalar("w_c", w_c)
            .scalar("contam_lo", 5.0)
            .scalar("contam_hi", 7.0)
            .build()
            .with_attachment(fit)
    }

    #[test]
    fn zero_weight_matches_system_model() {
        let m = model();
        let x = Input::new(vec![0.3]).unwrap();
        let z = latent(0.0);
        let c = m.moments(&x, &z).unwrap();
        for i in 0..100 {
            let y = m.gen(&x, &z, Seed(i)).unwrap().objective;
            let mut rng = Seed(i).rng();
            let _: f64 = rng.random();
            let e: f64 = StandardNormal.sample(&mut rng);
            assert_eq!(y, c.mean + c.var.sqrt() * e);
        }
    }

    #[test]
    fn unit_weight_stays_in_interval() {
        let m = model();
        let x = Input::new(vec![0.3]).unwrap();
        let z = latent(1.0);
        for i in 0..500 {
            let y = m.gen(&x, &z, Seed(i)).unwrap().objective;
            assert!((5.0..=7.0).contains(&y));
        }
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        let c = model().moments(&Input::new(vec![0.3]).unwrap(), &latent(0.3)).unwrap();
        // trapezoid on a fine grid; the uniform part is exact on grid nodes
        let (a, b, n) = (-15.0, 15.0, 3_000_000);
        let step = (b - a) / n as f64;
        let normal: f64 = (0..=n)
            .map(|i| {
                let y = a + i as f64 * step;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * normal_pdf(y, c.mean, c.var.sqrt())
            })
            .sum::<f64>()
            * step;
        let total = (1.0 - c.w_c) * normal + c.w_c * (c.hi - c.lo) * (1.0 / (c.hi - c.lo));
        assert!((total - 1.0).abs() < 1e-6, "{total}");
        assert!(c.density(6.0) > c.density(8.0));
    }

    #[test]
    fn loo_matches_dense_conditioning() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.4 - 1.0]).collect();
        let y = [0.3, -0.2, 1.1, 0.5, 4.0];
        let h = GpHyper { log_ls: vec![-0.5], log_sf2: 0.2, log_sn2: -3.0, m0: 0.1 };
        let flags = [false, false, false, false, true];
        let clean = CleanSet::new(&flags, &x, &y);
        let loo = loo_predictives(&clean, &x, &h).unwrap();
        for i in 0..5 {
            let others: Vec<usize> = (0..4).filter(|&j| j != i).collect();
            let xs: Vec<Vec<f64>> = others.iter().map(|&j| x[j].clone()).collect();
            let ys: Vec<f64> = others.iter().map(|&j| y[j]).collect();
            let (m, v) = GpFit::new(xs, &ys, &h).unwrap().predict(&x[i]);
            assert!((loo[i].0 - m).abs() < 1e-8, "mean {i}");
            assert!((loo[i].1 - v).abs() < 1e-8, "var {i}");
        }
    }

    #[test]
    fn flags_outliers() {
        let mut d = Dataset::new();
        for i in 0..15 {
            let xv = -1.0 + i as f64 / 7.0;
            let yv = if i % 5 == 2 { 6.0 + (i as f64) * 0.05 } else { xv * xv };
            d = d.append(Input::new(vec![xv]).unwrap(), Observation::new(yv)).unwrap();
        }
        let m = DenoisingGpModel::new(
            ModelContext::new(SearchBox::cube(-1.0, 1.0, 1).unwrap())
                .with_mh(crate::zoo::MhConfig { steps: 1000, ..Default::default() }),
        );
        let h = m.infer(&d, Seed(3)).unwrap();
        let mean = m.clean_mean(&Input::new(vec![0.0]).unwrap(), &h).unwrap();
        assert!(mean.abs() < 0.5, "{mean}");
    }
}
