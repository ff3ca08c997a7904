//! Bayesian product of experts over two models' posterior predictives.
//!
//! `ensemble_gen` draws predictive samples from both constituents and
//! merges them with `combine`, an index-chain sampler whose emissions target
//! the product of the two sample sets' kernel density estimates.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Input, Observation};
use crate::error::{Error, Result};
use crate::model::{Draws, LatentPair, LatentSample, Model, PosteriorHandle};
use crate::seed::Seed;
use crate::stats::normal_logpdf;

/// Acceptance test of the index chain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineRule {
    /// Metropolis rule: accept when `u < w_c / w_t`.
    #[default]
    Standard,
    /// Inverted test `u > w_c / w_t`, kept for comparison.
    AsPrinted,
}

impl FromStr for CombineRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(CombineRule::Standard),
            "as-printed" => Ok(CombineRule::AsPrinted),
            _ => Err(Error::InvalidConfig(format!("unknown combine rule `{s}`"))),
        }
    }
}

impl fmt::Display for CombineRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CombineRule::Standard => "standard",
            CombineRule::AsPrinted => "as-printed",
        })
    }
}

pub fn pair_mean(y1: f64, y2: f64) -> f64 {
    0.5 * (y1 + y2)
}

/// Kernel bandwidth at chain step `i`: `i^(-1/2)`.
fn bandwidth(i: usize) -> f64 {
    (i as f64).powf(-0.5)
}

fn log_pair_weight(y1: f64, y2: f64, i: usize) -> f64 {
    let m = pair_mean(y1, y2);
    let h = bandwidth(i);
    normal_logpdf(y1, m, h) + normal_logpdf(y2, m, h)
}

/// `N(y1 | ybar, i^-1/2) N(y2 | ybar, i^-1/2)` with `ybar` the pair mean.
pub fn pair_weight(y1: f64, y2: f64, i: usize) -> f64 {
    log_pair_weight(y1, y2, i).exp()
}

const ROLE_C1: u64 = 0;
const ROLE_C2: u64 = 1;
const ROLE_U: u64 = 2;
const ROLE_EMIT: u64 = 3;

/// Merges two equal-length sample sets into one of the same length.
///
/// Step `i` (1-based) proposes a uniform index pair, accepts it against the
/// current pair by `rule`, and emits `N(ybar_t, (i^-1/2 / 2)^2)`. All
/// randomness at step `i` comes from `seed.derive([i, role])`; the initial
/// pair uses `i = 0`. Weight ratios are taken in log space, and a current
/// pair of zero weight always yields to the proposal.
pub fn combine(y1: &[f64], y2: &[f64], seed: Seed, rule: CombineRule) -> Result<Vec<f64>> {
    let m = y1.len();
    if m == 0 || y2.len() != m {
        return Err(Error::InvalidInput(format!(
            "combine needs two non-empty sets of equal length, got {} and {}",
            m,
            y2.len()
        )));
    }
    let mut t1 = seed.derive(&[0, ROLE_C1]).index(m);
    let mut t2 = seed.derive(&[0, ROLE_C2]).index(m);
    let mut out = Vec::with_capacity(m);
    for i in 1..=m {
        let step = |role: u64| seed.derive(&[i as u64, role]);
        let c1 = step(ROLE_C1).index(m);
        let c2 = step(ROLE_C2).index(m);
        let u = step(ROLE_U).uniform();
        let lw_t = log_pair_weight(y1[t1], y2[t2], i);
        let lw_c = log_pair_weight(y1[c1], y2[c2], i);
        let accept = if lw_t == f64::NEG_INFINITY {
            true
        } else {
            let log_ratio = lw_c - lw_t;
            match rule {
                CombineRule::Standard => u.ln() < log_ratio,
                CombineRule::AsPrinted => u.ln() > log_ratio,
            }
        };
        if accept {
            t1 = c1;
            t2 = c2;
        }
        let sd = 0.5 * bandwidth(i);
        out.push(pair_mean(y1[t1], y2[t2]) + sd * step(ROLE_EMIT).std_normal());
    }
    Ok(out)
}

/// Product-of-experts model over two constituents, id `bpoe:<a>+<b>`.
///
/// Only the objective channel is combined; aux fields are dropped.
pub struct BpoeModel {
    first: Box<dyn Model>,
    second: Box<dyn Model>,
    rule: CombineRule,
}

impl BpoeModel {
    pub fn new(first: Box<dyn Model>, second: Box<dyn Model>, rule: CombineRule) -> Self {
        BpoeModel { first, second, rule }
    }

    pub fn rule(&self) -> CombineRule {
        self.rule
    }

    fn pair<'a>(&self, z: &'a LatentSample) -> Result<&'a LatentPair> {
        z.attachment::<LatentPair>()
            .ok_or_else(|| Error::HandleMismatch("bpoe needs a product posterior sample".into()))
    }

    fn merge(&self, y1: &[f64], y2: &[f64], seed: Seed) -> Result<Vec<Observation>> {
        Ok(combine(y1, y2, seed, self.rule)?.into_iter().map(Observation::new).collect())
    }
}

/// Ensemble predictive draw: `m` latent samples per side, `m` resampled
/// constituent draws per side, then `combine`.
///
/// Side `k` (1 or 2) draws `z_{k,j} = post_k(seed.derive([k, j]))` for
/// `j = 1..m`; entry `j` picks index `s = seed.derive([k + 2, j])` and uses
/// `gen_k(x, z_{k,s}, seed.derive([k, s]))`, so repeated indices repeat
/// their draw. Counts report `2m` post and `2m` gen calls.
pub fn ensemble_gen(
    first: &dyn Model,
    second: &dyn Model,
    handles: (&PosteriorHandle, &PosteriorHandle),
    x: &Input,
    m: usize,
    seed: Seed,
    rule: CombineRule,
) -> Result<Draws> {
    let side = |k: u64, model: &dyn Model, handle: &PosteriorHandle| -> Result<Vec<f64>> {
        let latents: Vec<LatentSample> =
            (1..=m).map(|j| model.post(handle, seed.derive(&[k, j as u64]))).collect();
        let mut memo: HashMap<usize, f64> = HashMap::new();
        (1..=m)
            .map(|j| {
                let s = seed.derive(&[k + 2, j as u64]).index(m) + 1;
                if let Some(v) = memo.get(&s) {
                    return Ok(*v);
                }
                let v = model.gen(x, &latents[s - 1], seed.derive(&[k, s as u64]))?.objective;
                memo.insert(s, v);
                Ok(v)
            })
            .collect()
    };
    let y1 = side(1, first, handles.0)?;
    let y2 = side(2, second, handles.1)?;
    let observations = combine(&y1, &y2, seed.derive(&[5]), rule)?
        .into_iter()
        .map(Observation::new)
        .collect();
    Ok(Draws { observations, post_calls: 2 * m, gen_calls: 2 * m })
}

impl Model for BpoeModel {
    fn id(&self) -> String {
        format!("bpoe:{}+{}", self.first.id(), self.second.id())
    }

    fn infer(&self, data: &Dataset, seed: Seed) -> Result<PosteriorHandle> {
        let h1 = self.first.infer(data, seed.derive(&[1]))?;
        let h2 = self.second.infer(data, seed.derive(&[2]))?;
        Ok(PosteriorHandle::Product(Arc::new(h1), Arc::new(h2)))
    }

    fn infer_with_rates(&self, data: &Dataset, seed: Seed) -> Result<(PosteriorHandle, Vec<f64>)> {
        let (h1, mut r1) = self.first.infer_with_rates(data, seed.derive(&[1]))?;
        let (h2, r2) = self.second.infer_with_rates(data, seed.derive(&[2]))?;
        r1.extend(r2);
        Ok((PosteriorHandle::Product(Arc::new(h1), Arc::new(h2)), r1))
    }

    /// A single combined draw: one constituent draw per side, merged by a
    /// one-step `combine`.
    fn gen(&self, x: &Input, z: &LatentSample, seed: Seed) -> Result<Observation> {
        let pair = self.pair(z)?;
        let y1 = self.first.gen(x, &pair.0, seed.derive(&[1]))?.objective;
        let y2 = self.second.gen(x, &pair.1, seed.derive(&[2]))?.objective;
        Ok(self.merge(&[y1], &[y2], seed.derive(&[5]))?.remove(0))
    }

    fn predictive_batch(
        &self,
        x: &Input,
        handle: &PosteriorHandle,
        m: usize,
        seed_base: Seed,
    ) -> Result<Draws> {
        let (h1, h2) = handle
            .components()
            .ok_or_else(|| Error::HandleMismatch("bpoe needs a product posterior".into()))?;
        ensemble_gen(&*self.first, &*self.second, (h1, h2), x, m, seed_base, self.rule)
    }

    fn conditional_batch(
        &self,
        x: &Input,
        z: &LatentSample,
        m: usize,
        seed_base: Seed,
    ) -> Result<Draws> {
        let pair = self.pair(z)?;
        let d1 = self.first.conditional_batch(x, &pair.0, m, seed_base.derive(&[1]))?;
        let d2 = self.second.conditional_batch(x, &pair.1, m, seed_base.derive(&[2]))?;
        let y1: Vec<f64> = d1.observations.iter().map(|o| o.objective).collect();
        let y2: Vec<f64> = d2.observations.iter().map(|o| o.objective).collect();
        Ok(Draws {
            observations: self.merge(&y1, &y2, seed_base.derive(&[5]))?,
            post_calls: 0,
            gen_calls: d1.gen_calls + d2.gen_calls,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_formulas() {
        assert_eq!(pair_mean(1.0, 3.0), 2.0);
        let top = pair_weight(0.7, 0.7, 4);
        let sd: f64 = 0.5;
        let peak = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
        assert!((top - peak * peak).abs() < 1e-12);
        let mut last = top;
        for k in 1..20 {
            let w = pair_weight(0.7, 0.7 + 0.1 * k as f64, 4);
            assert!(w < last);
            last = w;
        }
    }

    #[test]
    fn single_step_emits_around_pair_mean() {
        let draws: Vec<f64> = (0..4000)
            .map(|s| combine(&[1.0], &[2.0], Seed(s), CombineRule::Standard).unwrap()[0])
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1.5).abs() < 0.03, "{mean}");
        assert!((var - 0.25).abs() < 0.03, "{var}");
    }

    #[test]
    fn identical_sets_concentrate() {
        let v = vec![3.0; 400];
        let out = combine(&v, &v, Seed(1), CombineRule::Standard).unwrap();
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean - 3.0).abs() < 0.05);
        assert!((out[399] - 3.0).abs() < 0.2);
    }

    #[test]
    fn combine_is_deterministic_and_checks_lengths() {
        let a = [0.1, 0.5, -0.3];
        let b = [1.0, 0.2, 0.4];
        assert_eq!(
            combine(&a, &b, Seed(9), CombineRule::Standard).unwrap(),
            combine(&a, &b, Seed(9), CombineRule::Standard).unwrap()
        );
        assert!(combine(&a, &b[..2], Seed(9), CombineRule::Standard).is_err());
        assert!(combine(&[], &[], Seed(9), CombineRule::Standard).is_err());
    }

    #[test]
    fn rule_parses() {
        assert_eq!("as-printed".parse::<CombineRule>().unwrap(), CombineRule::AsPrinted);
        assert_eq!(CombineRule::Standard.to_string(), "standard");
        assert!("inverse".parse::<CombineRule>().is_err());
    }
}
