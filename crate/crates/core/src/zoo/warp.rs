//! Warp model for multi-task data: each task observes a per-task linear
//! warp of one shared latent GP,
//! `y = w0_t + w1_t . x + w2_t z(x) + eps`.
//!
//! Inputs carry the task as their last coordinate (rounded, 1-based), so
//! the model sits in the same search space as a plain GP over tasks and
//! inputs. The latent `z` is marginalized: given the warps and lengthscales
//! the observations are jointly Gaussian, and MH runs only over
//! `(lengthscales, warps, noise)`. The latent GP has zero mean and unit
//! signal variance, since the warps already carry offset and scale.

use rand_distr::{Distribution, StandardNormal};

use super::gp::{dataset_xy, se_kernel, CholFit};
use super::mh::mh_infer;
use super::{cached_model_ops, priors, CachedGen, ModelContext};
use crate::data::{AuxKey, AuxValue, Dataset, Input, Observation};
use crate::error::{Error, Result};
use crate::model::{LatentSample, Model, PosteriorHandle};
use crate::seed::Seed;
use crate::stats::normal_logpdf;

/// Linear warp of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskWarp {
    pub w0: f64,
    pub w1: Vec<f64>,
    pub w2: f64,
}

impl TaskWarp {
    /// `w0 + w1 . x`.
    pub fn offset(&self, x: &[f64]) -> f64 {
        self.w0 + self.w1.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Warp of a contextual task: `base + sum_j c_j modulation_j`.
pub fn contextual_warp(base: &TaskWarp, modulation: &[TaskWarp], context: &[f64]) -> Result<TaskWarp> {
    if modulation.len() != context.len() {
        return Err(Error::DimensionMismatch { expected: modulation.len(), got: context.len() });
    }
    let mut w = base.clone();
    for (m, &c) in modulation.iter().zip(context) {
        if m.w1.len() != w.w1.len() {
            return Err(Error::DimensionMismatch { expected: w.w1.len(), got: m.w1.len() });
        }
        w.w0 += c * m.w0;
        w.w2 += c * m.w2;
        for (a, b) in w.w1.iter_mut().zip(&m.w1) {
            *a += c * b;
        }
    }
    Ok(w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarpParams {
    pub log_ls: Vec<f64>,
    pub warps: Vec<TaskWarp>,
    pub sigma2: f64,
}

impl WarpParams {
    pub fn tasks(&self) -> usize {
        self.warps.len()
    }

    /// Packed as `[log_ls.., (w0, w1.., w2) per task.., ln sigma2]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_ls.clone();
        for w in &self.warps {
            v.push(w.w0);
            v.extend(&w.w1);
            v.push(w.w2);
        }
        v.push(self.sigma2.ln());
        v
    }

    pub fn from_slice(t: &[f64], dx: usize, tasks: usize) -> Self {
        let mut warps = Vec::with_capacity(tasks);
        let mut o = dx;
        for _ in 0..tasks {
            warps.push(TaskWarp { w0: t[o], w1: t[o + 1..o + 1 + dx].to_vec(), w2: t[o + 1 + dx] });
            o += dx + 2;
        }
        WarpParams { log_ls: t[..dx].to_vec(), warps, sigma2: t[o].exp() }
    }

    fn log_prior(&self) -> f64 {
        let mut lp = normal_logpdf(self.sigma2.ln(), priors::WARP_LOG_SIGMA2_MEAN, priors::WARP_LOG_SIGMA2_SD);
        for w in &self.warps {
            lp += normal_logpdf(w.w0, 0.0, priors::WARP_W0_SD)
                + normal_logpdf(w.w2, priors::WARP_W2_MEAN, priors::WARP_W2_SD)
                + w.w1.iter().map(|v| normal_logpdf(*v, 0.0, priors::WARP_W1_SD)).sum::<f64>();
        }
        lp
    }

    pub fn to_latent(&self) -> LatentSample {
        let mut b = LatentSample::builder().vector("log_ls", self.log_ls.clone()).scalar("sigma2", self.sigma2);
        for (t, w) in self.warps.iter().enumerate() {
            b = b
                .scalar(&format!("task{}/w0", t + 1), w.w0)
                .vector(&format!("task{}/w1", t + 1), w.w1.clone())
                .scalar(&format!("task{}/w2", t + 1), w.w2);
        }
        b.build()
    }
}

/// Splits an input into its task (1-based) and the remaining coordinates.
pub fn split_task(x: &[f64], tasks: usize) -> (usize, &[f64]) {
    let (last, rest) = x.split_last().expect("inputs are non-empty");
    let t = last.round().clamp(1.0, tasks as f64) as usize;
    (t, rest)
}

/// Data and factorization behind one posterior sample.
#[derive(Debug)]
struct WarpFit {
    params: WarpParams,
    ls: Vec<f64>,
    x: Vec<Vec<f64>>,
    /// `w2` of each training point's task.
    scale: Vec<f64>,
    fit: CholFit,
}

impl WarpFit {
    fn new(params: WarpParams, x: &[Vec<f64>], tasks: &[usize], y: &[f64]) -> Result<Self> {
        let ls: Vec<f64> = params.log_ls.iter().map(|v| v.exp()).collect();
        let n = y.len();
        let scale: Vec<f64> = tasks.iter().map(|&t| params.warps[t - 1].w2).collect();
        let cov = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            let k = scale[i] * scale[j] * se_kernel(&x[i], &x[j], &ls, 1.0);
            if i == j {
                k + params.sigma2
            } else {
                k
            }
        });
        let resid: Vec<f64> =
            (0..n).map(|i| y[i] - params.warps[tasks[i] - 1].offset(&x[i])).collect();
        let fit = CholFit::new(cov, &resid)?;
        Ok(WarpFit { params, ls, x: x.to_vec(), scale, fit })
    }

    /// Mean and variance of the latent `z` at `x`.
    fn latent(&self, x: &[f64]) -> (f64, f64) {
        let cross: Vec<f64> =
            self.x.iter().zip(&self.scale).map(|(xi, s)| s * se_kernel(x, xi, &self.ls, 1.0)).collect();
        self.fit.condition(&cross, 1.0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct WarpMoments {
    pub task: usize,
    pub offset: f64,
    pub w2: f64,
    pub latent_mean: f64,
    pub latent_var: f64,
    pub sigma2: f64,
}

/// Warp model, id `"warp"`.
#[derive(Clone, Debug)]
pub struct WarpModel {
    ctx: ModelContext,
}

impl WarpModel {
    pub fn new(ctx: ModelContext) -> Result<Self> {
        if ctx.search_box.dim() < 2 {
            return Err(Error::InvalidConfig(
                "warp needs at least one input coordinate plus the task coordinate".into(),
            ));
        }
        if ctx.tasks == 0 {
            return Err(Error::InvalidConfig("warp needs at least one task".into()));
        }
        Ok(WarpModel { ctx })
    }

    fn input_dim(&self) -> usize {
        self.ctx.search_box.dim() - 1
    }

    pub fn moments(&self, x: &Input, z: &LatentSample) -> Result<WarpMoments> {
        let fit = z
            .attachment::<WarpFit>()
            .ok_or_else(|| Error::HandleMismatch("warp sample has no fit attached".into()))?;
        if x.dim() != self.input_dim() + 1 {
            return Err(Error::DimensionMismatch { expected: self.input_dim() + 1, got: x.dim() });
        }
        let (t, xs) = split_task(x.coords(), self.ctx.tasks);
        let w = fit.params.warps.get(t - 1).ok_or_else(|| Error::UnknownTask {
            task: t,
            tasks: fit.params.tasks(),
        })?;
        let (latent_mean, latent_var) = fit.latent(xs);
        Ok(WarpMoments { task: t, offset: w.offset(xs), w2: w.w2, latent_mean, latent_var, sigma2: fit.params.sigma2 })
    }

    /// Posterior samples of the warp parameters.
    pub fn params(handle: &PosteriorHandle) -> Result<Vec<WarpParams>> {
        let pool = handle
            .samples()
            .ok_or_else(|| Error::HandleMismatch("expected a sample pool".into()))?;
        pool.iter()
            .map(|z| {
                z.attachment::<WarpFit>()
                    .map(|f| f.params.clone())
                    .ok_or_else(|| Error::HandleMismatch("warp sample has no fit attached".into()))
            })
            .collect()
    }
}

impl CachedGen for WarpModel {
    type Cache = WarpMoments;

    fn prepare(&self, x: &Input, z: &LatentSample) -> Result<WarpMoments> {
        self.moments(x, z)
    }

    fn draw(&self, c: &WarpMoments, seed: Seed) -> Observation {
        let mut rng = seed.rng();
        let e_z: f64 = StandardNormal.sample(&mut rng);
        let e_y: f64 = StandardNormal.sample(&mut rng);
        let z = c.latent_mean + c.latent_var.sqrt() * e_z;
        Observation::new(c.offset + c.w2 * z + c.sigma2.sqrt() * e_y)
            .with(AuxKey::Task, AuxValue::Int(c.task as i64))
    }
}

impl Model for WarpModel {
    fn id(&self) -> String {
        "warp".into()
    }

    fn infer(&self, data: &Dataset, seed: Seed) -> Result<PosteriorHandle> {
        Ok(self.infer_with_rates(data, seed)?.0)
    }

    fn infer_with_rates(&self, data: &Dataset, seed: Seed) -> Result<(PosteriorHandle, Vec<f64>)> {
        let dx = self.input_dim();
        let nt = self.ctx.tasks;
        let (full, y) = dataset_xy(data);
        let mut x = Vec::with_capacity(y.len());
        let mut tasks = Vec::with_capacity(y.len());
        for v in &full {
            if v.len() != dx + 1 {
                return Err(Error::DimensionMismatch { expected: dx + 1, got: v.len() });
            }
            let (t, xs) = split_task(v, nt);
            tasks.push(t);
            x.push(xs.to_vec());
        }
        let target = |t: &[f64]| {
            let p = WarpParams::from_slice(t, dx, nt);
            let lp = p.log_prior();
            match WarpFit::new(p, &x, &tasks, &y) {
                Ok(f) => lp + f.fit.log_marginal(),
                Err(_) => f64::NEG_INFINITY,
            }
        };
        let bx = &self.ctx.search_box;
        let init = WarpParams {
            log_ls: (0..dx).map(|j| (crate::zoo::priors::GP_LENGTHSCALE_FRACTION * bx.width(j)).ln()).collect(),
            warps: (1..=nt)
                .map(|t| {
                    let ys: Vec<f64> = tasks.iter().zip(&y).filter(|(k, _)| **k == t).map(|(_, v)| *v).collect();
                    let w0 = if ys.is_empty() { 0.0 } else { ys.iter().sum::<f64>() / ys.len() as f64 };
                    TaskWarp { w0, w1: vec![0.0; dx], w2: priors::WARP_W2_MEAN }
                })
                .collect(),
            sigma2: priors::WARP_LOG_SIGMA2_MEAN.exp(),
        };
        let mut scales = vec![priors::GP_LOG_HYPER_SD; dx];
        for _ in 0..nt {
            scales.push(priors::WARP_W0_SD);
            scales.extend(vec![priors::WARP_W1_SD; dx]);
            scales.push(priors::WARP_W2_SD);
        }
        scales.push(priors::WARP_LOG_SIGMA2_SD);
        let out = mh_infer(target, init.to_vec(), &scales, &self.ctx.mh, seed)?;
        let pool = out
            .pool
            .iter()
            .map(|t| {
                let p = WarpParams::from_slice(t, dx, nt);
                let latent = p.to_latent();
                Ok(latent.with_attachment(WarpFit::new(p, &x, &tasks, &y)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((PosteriorHandle::pool(pool)?, vec![out.acceptance_rate]))
    }

    cached_model_ops!();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::SearchBox;

    fn ctx() -> ModelContext {
        ModelContext::new(SearchBox::new(vec![(0.0, 1.0), (0.5, 2.5)]).unwrap())
    }

    fn sample(w: TaskWarp, sigma2: f64) -> LatentSample {
        let p = WarpParams { log_ls: vec![-1.0], warps: vec![w.clone(), w], sigma2 };
        let fit = WarpFit::new(p.clone(), &[vec![0.2]], &[1], &[0.7]).unwrap();
        p.to_latent().with_attachment(fit)
    }

    #[test]
    fn identity_warp_returns_latent_draw() {
        let m = WarpModel::new(ctx()).unwrap();
        let z = sample(TaskWarp { w0: 0.0, w1: vec![0.0], w2: 1.0 }, 1e-300);
        let x = Input::new(vec![0.6, 2.0]).unwrap();
        let c = m.moments(&x, &z).unwrap();
        for i in 0..50 {
            let y = m.gen(&x, &z, Seed(i)).unwrap();
            let e: f64 = StandardNormal.sample(&mut Seed(i).rng());
            assert!((y.objective - (c.latent_mean + c.latent_var.sqrt() * e)).abs() < 1e-12);
            assert_eq!(y.aux_int(AuxKey::Task), Some(2));
        }
    }

    #[test]
    fn constant_warp_ignores_latent() {
        let m = WarpModel::new(ctx()).unwrap();
        let z = sample(TaskWarp { w0: 1.0, w1: vec![0.0], w2: 0.0 }, 1e-300);
        for i in 0..20 {
            let y = m.gen(&Input::new(vec![i as f64 / 20.0, 1.0]).unwrap(), &z, Seed(i)).unwrap();
            assert!((y.objective - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn task_coordinate_rounds_and_clamps() {
        assert_eq!(split_task(&[0.3, 1.4], 2).0, 1);
        assert_eq!(split_task(&[0.3, 1.6], 2).0, 2);
        assert_eq!(split_task(&[0.3, 9.0], 2).0, 2);
        assert_eq!(split_task(&[0.3, -3.0], 2), (1, &[0.3][..]));
    }

    #[test]
    fn contextual_warp_is_linear_in_context() {
        let base = TaskWarp { w0: 1.0, w1: vec![0.5], w2: 1.0 };
        let m1 = TaskWarp { w0: 2.0, w1: vec![0.0], w2: -0.5 };
        let m2 = TaskWarp { w0: 0.0, w1: vec![1.0], w2: 0.0 };
        let w = contextual_warp(&base, &[m1.clone(), m2.clone()], &[0.5, 2.0]).unwrap();
        assert_eq!(w, TaskWarp { w0: 2.0, w1: vec![2.5], w2: 0.75 });
        assert_eq!(contextual_warp(&base, &[m1, m2], &[0.0, 0.0]).unwrap(), base);
        assert!(contextual_warp(&base, &[], &[1.0]).is_err());
    }

    #[test]
    fn params_roundtrip() {
        let p = WarpParams {
            log_ls: vec![0.1, -0.2],
            warps: vec![
                TaskWarp { w0: 1.0, w1: vec![0.1, 0.2], w2: 0.9 },
                TaskWarp { w0: -1.0, w1: vec![0.3, 0.4], w2: 1.1 },
            ],
            sigma2: 0.05,
        };
        let q = WarpParams::from_slice(&p.to_vec(), 2, 2);
        assert_eq!(q.warps, p.warps);
        assert!((q.sigma2 - p.sigma2).abs() < 1e-15);
    }
}
