//! Adaptive random-walk Metropolis.
//!
//! Joint Gaussian proposals with per-parameter scales. During burn-in the
//! scales track the running posterior standard deviation and a global
//! multiplier is tuned toward the target acceptance rate; both are frozen
//! afterwards, so the post-burn-in chain is a plain Metropolis chain.

use rand::rngs::SmallRng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MhConfig {
    pub steps: usize,
    /// Fraction of `steps` discarded as burn-in.
    pub burn_in: f64,
    pub thin: usize,
    /// Initial proposal scale, as a multiple of each parameter's prior scale.
    pub initial_scale: f64,
    pub target_accept: f64,
    pub pool_cap: usize,
}

impl Default for MhConfig {
    fn default() -> Self {
        MhConfig {
            steps: 5000,
            burn_in: 0.5,
            thin: 5,
            initial_scale: 0.5,
            target_accept: 0.23,
            pool_cap: 500,
        }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.thin == 0 || self.pool_cap == 0 {
            return Err(Error::InvalidConfig("steps, thin and pool_cap must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::InvalidConfig(format!("burn_in {} outside [0, 1)", self.burn_in)));
        }
        if self.kept_steps() < self.thin {
            return Err(Error::InvalidConfig("configuration leaves an empty pool".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig("target_accept must lie in (0, 1)".into()));
        }
        if !(self.initial_scale > 0.0 && self.initial_scale.is_finite()) {
            return Err(Error::InvalidConfig("initial_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn burn_in_steps(&self) -> usize {
        (self.steps as f64 * self.burn_in).floor() as usize
    }

    fn kept_steps(&self) -> usize {
        self.steps - self.burn_in_steps()
    }
}

/// Running mean and variance.
#[derive(Clone, Debug)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Welford { n: 0.0, mean: vec![0.0; d], m2: vec![0.0; d] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / self.n;
            *s += delta * (v - *m);
        }
    }

    fn std(&self, j: usize) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            (self.m2[j] / (self.n - 1.0)).sqrt()
        }
    }
}

/// One random-walk Metropolis chain. Exposed so composite samplers can
/// interleave it with their own updates.
#[derive(Clone, Debug)]
pub struct RwmChain {
    theta: Vec<f64>,
    logp: f64,
    scales: Vec<f64>,
    floor: Vec<f64>,
    log_lambda: f64,
    target_accept: f64,
    stats: Welford,
    adapt_steps: usize,
    accepted: usize,
    proposed: usize,
}

impl RwmChain {
    pub fn new(theta: Vec<f64>, logp: f64, scales: Vec<f64>, target_accept: f64) -> Result<Self> {
        if !logp.is_finite() {
            return Err(Error::Inference(format!("log target is {logp} at the initial state")));
        }
        if scales.len() != theta.len() {
            return Err(Error::DimensionMismatch { expected: theta.len(), got: scales.len() });
        }
        let d = theta.len();
        let floor = scales.iter().map(|s| s * 1e-3).collect();
        Ok(RwmChain {
            theta,
            logp,
            scales,
            floor,
            log_lambda: 0.0,
            target_accept,
            stats: Welford::new(d),
            adapt_steps: 0,
            accepted: 0,
            proposed: 0,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn logp(&self) -> f64 {
        self.logp
    }

    /// Re-scores the current state after the target changed.
    pub fn refresh(&mut self, logp: f64) {
        self.logp = logp;
    }

    pub fn accepted(&self) -> usize {
        self.accepted
    }

    pub fn proposed(&self) -> usize {
        self.proposed
    }

    pub fn reset_counts(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }

    /// One Metropolis step. Returns whether the proposal was accepted.
    pub fn step<F>(&mut self, target: &mut F, rng: &mut SmallRng, adapt: bool) -> bool
    where
        F: FnMut(&[f64]) -> f64,
    {
        let lambda = self.log_lambda.exp();
        let proposal: Vec<f64> = self
            .theta
            .iter()
            .zip(&self.scales)
            .map(|(&t, &s)| {
                let e: f64 = StandardNormal.sample(rng);
                t + lambda * s * e
            })
            .collect();
        let logp_new = target(&proposal);
        let accept = logp_new.is_finite() && {
            let log_u = rng.random::<f64>().ln();
            log_u < logp_new - self.logp
        };
        self.proposed += 1;
        if accept {
            self.theta = proposal;
            self.logp = logp_new;
            self.accepted += 1;
        }
        if adapt {
            self.adapt(accept);
        }
        accept
    }

    fn adapt(&mut self, accepted: bool) {
        self.adapt_steps += 1;
        let gamma = (self.adapt_steps as f64 + 1.0).powf(-0.6);
        let a = if accepted { 1.0 } else { 0.0 };
        self.log_lambda = (self.log_lambda + gamma * (a - self.target_accept)).clamp(-10.0, 5.0);
        self.stats.push(&self.theta);
        if self.adapt_steps % 100 == 0 && self.adapt_steps >= 200 {
            let d = self.theta.len() as f64;
            let factor = 2.38 / d.sqrt();
            let before: f64 = self.scales.iter().map(|s| s.ln()).sum::<f64>();
            for j in 0..self.scales.len() {
                self.scales[j] = (factor * self.stats.std(j)).max(self.floor[j]);
            }
            // keep the global multiplier meaningful across the rescale
            let after: f64 = self.scales.iter().map(|s| s.ln()).sum::<f64>();
            self.log_lambda += (before - after) / d;
            self.log_lambda = self.log_lambda.clamp(-10.0, 5.0);
        }
    }
}

#[derive(Clone, Debug)]
pub struct MhOutput {
    /// Thinned post-burn-in states, capped at `pool_cap`.
    pub pool: Vec<Vec<f64>>,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
}

/// Runs adaptive random-walk Metropolis on `log_target` from `init`.
///
/// `prior_scales` sets the initial per-parameter proposal scales (times
/// `config.initial_scale`).
pub fn mh_infer<F>(
    mut log_target: F,
    init: Vec<f64>,
    prior_scales: &[f64],
    config: &MhConfig,
    seed: Seed,
) -> Result<MhOutput>
where
    F: FnMut(&[f64]) -> f64,
{
    config.validate()?;
    let logp = log_target(&init);
    let scales = prior_scales.iter().map(|s| s * config.initial_scale).collect();
    let mut chain = RwmChain::new(init, logp, scales, config.target_accept)?;
    let mut rng = seed.rng();
    let burn = config.burn_in_steps();
    let mut total_accepted = 0;
    let mut pool = Vec::with_capacity(config.kept_steps() / config.thin + 1);
    for t in 0..config.steps {
        if t == burn {
            total_accepted += chain.accepted();
            chain.reset_counts();
        }
        chain.step(&mut log_target, &mut rng, t < burn);
        if t >= burn && (t - burn + 1) % config.thin == 0 {
            pool.push(chain.theta().to_vec());
        }
    }
    total_accepted += chain.accepted();
    if total_accepted == 0 {
        return Err(Error::Inference("no proposal was ever accepted".into()));
    }
    let acceptance_rate = chain.accepted() as f64 / chain.proposed().max(1) as f64;
    let pool = cap_pool(pool, config.pool_cap, &mut rng);
    Ok(MhOutput { pool, acceptance_rate })
}

/// Uniform subsample of `pool` down to `cap` entries, order preserved.
pub(crate) fn cap_pool<T>(pool: Vec<T>, cap: usize, rng: &mut SmallRng) -> Vec<T> {
    if pool.len() <= cap {
        return pool;
    }
    let mut keep = rand::seq::index::sample(rng, pool.len(), cap).into_vec();
    keep.sort_unstable();
    let mut it = keep.into_iter().peekable();
    pool.into_iter()
        .enumerate()
        .filter_map(|(i, v)| {
            if it.peek() == Some(&i) {
                it.next();
                Some(v)
            } else {
                None
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_std(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v.sqrt())
    }

    #[test]
    fn flat_target_always_accepts() {
        let mut rng = Seed(1).rng();
        let mut chain = RwmChain::new(vec![0.0, 0.0], 0.0, vec![1.0, 1.0], 0.23).unwrap();
        let mut flat = |_: &[f64]| 0.0;
        for _ in 0..200 {
            assert!(chain.step(&mut flat, &mut rng, true));
        }
    }

    #[test]
    fn standard_normal_moments() {
        let cfg = MhConfig::default();
        let out = mh_infer(|t| -0.5 * t[0] * t[0], vec![0.0], &[1.0], &cfg, Seed(7)).unwrap();
        let xs: Vec<f64> = out.pool.iter().map(|p| p[0]).collect();
        let (m, s) = mean_std(&xs);
        assert!(m.abs() < 0.1, "mean {m}");
        assert!((s - 1.0).abs() < 0.15, "std {s}");
        assert!((0.1..=0.5).contains(&out.acceptance_rate), "rate {}", out.acceptance_rate);
    }

    #[test]
    fn same_seed_same_pool() {
        let cfg = MhConfig { steps: 1000, ..Default::default() };
        let target = |t: &[f64]| -0.5 * (t[0] * t[0] + 4.0 * t[1] * t[1]);
        let a = mh_infer(target, vec![0.1, 0.1], &[1.0, 1.0], &cfg, Seed(3)).unwrap();
        let b = mh_infer(target, vec![0.1, 0.1], &[1.0, 1.0], &cfg, Seed(3)).unwrap();
        assert_eq!(a.pool, b.pool);
    }

    #[test]
    fn pool_respects_thin_and_cap() {
        let cfg = MhConfig { steps: 1000, burn_in: 0.5, thin: 5, pool_cap: 30, ..Default::default() };
        let out = mh_infer(|t| -t[0] * t[0], vec![0.0], &[1.0], &cfg, Seed(3)).unwrap();
        assert_eq!(out.pool.len(), 30);
        let cfg = MhConfig { pool_cap: 1000, ..cfg };
        let out = mh_infer(|t| -t[0] * t[0], vec![0.0], &[1.0], &cfg, Seed(3)).unwrap();
        assert_eq!(out.pool.len(), 100);
    }

    #[test]
    fn non_finite_init_is_error() {
        let cfg = MhConfig::default();
        let r = mh_infer(|_| f64::NEG_INFINITY, vec![0.0], &[1.0], &cfg, Seed(1));
        assert!(matches!(r, Err(Error::Inference(_))));
    }

    #[test]
    fn degenerate_target_is_error() {
        // finite only at the origin: nothing is ever accepted
        let cfg = MhConfig { steps: 200, ..Default::default() };
        let r = mh_infer(
            |t| if t[0] == 0.0 { 0.0 } else { f64::NEG_INFINITY },
            vec![0.0],
            &[1.0],
            &cfg,
            Seed(1),
        );
        assert!(matches!(r, Err(Error::Inference(_))));
    }

    #[test]
    fn config_validation() {
        assert!(MhConfig { burn_in: 1.0, ..Default::default() }.validate().is_err());
        assert!(MhConfig { steps: 0, ..Default::default() }.validate().is_err());
        assert!(MhConfig { steps: 10, thin: 20, ..Default::default() }.validate().is_err());
        MhConfig::default().validate().unwrap();
    }
}
