//! Zeroth-order minimization of acquisition surfaces over a box.
//!
//! Uniform random search followed by a short Gaussian local refinement of
//! the incumbent. Candidates get their index before evaluation and ties go
//! to the earliest index, so the result never depends on evaluation order.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::acquisition::AcqEvalRecord;
use crate::data::Input;
use crate::error::{Error, Result};
use crate::seed::Seed;

/// Axis-aligned box `[lo_j, hi_j]` with finite bounds and `lo_j < hi_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct SearchBox {
    bounds: Vec<(f64, f64)>,
}

impl SearchBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidConfig("search box needs at least one dimension".into()));
        }
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidConfig(format!(
                    "bad bounds [{lo}, {hi}] in dimension {j}"
                )));
            }
        }
        Ok(SearchBox { bounds })
    }

    /// `[lo, hi]^dim`.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        SearchBox::new(vec![(lo, hi); dim])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn width(&self, j: usize) -> f64 {
        self.bounds[j].1 - self.bounds[j].0
    }

    pub fn contains(&self, x: &Input) -> bool {
        x.dim() == self.dim()
            && x.coords().iter().zip(&self.bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Input {
        let coords = self.bounds.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>());
        Input::new(coords.collect()).expect("box bounds are finite")
    }

    pub fn clip(&self, coords: &mut [f64]) {
        for (v, &(lo, hi)) in coords.iter_mut().zip(&self.bounds) {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn center(&self) -> Input {
        Input::new(self.bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect())
            .expect("box bounds are finite")
    }
}

impl TryFrom<Vec<(f64, f64)>> for SearchBox {
    type Error = Error;
    fn try_from(bounds: Vec<(f64, f64)>) -> Result<Self> {
        SearchBox::new(bounds)
    }
}

impl From<SearchBox> for Vec<(f64, f64)> {
    fn from(b: SearchBox) -> Self {
        b.bounds
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Uniform random candidates evaluated first.
    pub budget: usize,
    /// Local perturbation rounds around the incumbent.
    pub refine_rounds: usize,
    /// Initial perturbation scale as a fraction of each box width.
    pub refine_scale: f64,
    /// The scale halves after this many rounds.
    pub halve_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { budget: 100, refine_rounds: 20, refine_scale: 0.05, halve_every: 5 }
    }
}

/// Call counts accumulated over a whole optimizer run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallTotals {
    pub post_calls: usize,
    pub gen_calls: usize,
    pub evaluations: usize,
    pub failures: usize,
}

impl CallTotals {
    pub fn add(&mut self, r: &AcqEvalRecord) {
        self.post_calls += r.post_calls;
        self.gen_calls += r.gen_calls;
        self.evaluations += 1;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimum {
    pub x: Input,
    /// Minimized score at `x`.
    pub value: f64,
    /// Evaluation index of `x` (0-based, random candidates first).
    pub index: usize,
    pub totals: CallTotals,
}

/// Minimizes `acq(x, index)` over `bounds`.
///
/// `acq` returns a record whose `value` is the score to minimize. Failed or
/// non-finite evaluations are skipped and counted; if every evaluation
/// fails the last error is returned.
pub fn optimize_acq<F>(
    mut acq: F,
    bounds: &SearchBox,
    config: &OptimizerConfig,
    seed: Seed,
) -> Result<Optimum>
where
    F: FnMut(&Input, usize) -> Result<AcqEvalRecord>,
{
    if config.budget == 0 {
        return Err(Error::InvalidConfig("optimizer budget must be at least 1".into()));
    }
    let mut totals = CallTotals::default();
    let mut best: Option<(Input, f64, usize)> = None;
    let mut last_err = None;

    let mut consider = |x: Input, index: usize, best: &mut Option<(Input, f64, usize)>| {
        match acq(&x, index) {
            Ok(r) if r.value.is_finite() => {
                totals.add(&r);
                if best.as_ref().is_none_or(|(_, v, _)| r.value < *v) {
                    *best = Some((x, r.value, index));
                }
            }
            Ok(r) => {
                totals.add(&r);
                totals.failures += 1;
            }
            Err(e) => {
                totals.failures += 1;
                last_err = Some(e);
            }
        }
    };

    let mut rng = seed.derive(&[0]).rng();
    for index in 0..config.budget {
        let x = bounds.sample(&mut rng);
        consider(x, index, &mut best);
    }

    let mut scale = config.refine_scale;
    for round in 0..config.refine_rounds {
        if round > 0 && config.halve_every > 0 && round % config.halve_every == 0 {
            scale *= 0.5;
        }
        let Some((incumbent, _, _)) = best.as_ref() else { break };
        let mut rng = seed.derive(&[1, round as u64]).rng();
        let mut coords: Vec<f64> = incumbent
            .coords()
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v + scale * bounds.width(j) * e
            })
            .collect();
        bounds.clip(&mut coords);
        let x = Input::new(coords).expect("clipped coordinates are finite");
        consider(x, config.budget + round, &mut best);
    }

    match best {
        Some((x, value, index)) => Ok(Optimum { x, value, index, totals }),
        None => Err(last_err.unwrap_or_else(|| {
            Error::InvalidInput("every acquisition evaluation was non-finite".into())
        })),
    }
}
