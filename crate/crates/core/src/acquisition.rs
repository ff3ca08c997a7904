//! Monte Carlo acquisition functions computed from `post` and `gen` only.
//!
//! Each acquisition draws `M` posterior-predictive samples at `x` and reduces
//! their objective values. Raw values are unnormalized sums, as in the
//! textbook estimators: EI and PI are improvement scores (larger is
//! better), UCB returns a lower confidence bound and TS a sum of objectives
//! (both smaller is better). [`signed_score`] maps any of them onto the
//! per-sample, smaller-is-better scale the optimizer minimizes.

use serde::{Deserialize, Serialize};

use crate::data::{Input, Objective};
use crate::error::{Error, Result};
use crate::model::{Draws, Model, PosteriorHandle};
use crate::seed::Seed;

/// How the parametric LCB scales the spread term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spread {
    /// `mean - beta * variance`.
    #[default]
    Variance,
    /// `mean - beta * std`, the classical confidence-bound form.
    Std,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum LcbEstimator {
    /// Order statistic `f_(b)`, averaging neighbours for fractional `b`.
    EmpiricalQuantile { b: f64 },
    Parametric {
        beta: f64,
        #[serde(default)]
        spread: Spread,
    },
}

impl LcbEstimator {
    pub fn min_samples(&self) -> usize {
        match self {
            LcbEstimator::EmpiricalQuantile { .. } => 1,
            LcbEstimator::Parametric { .. } => 2,
        }
    }

    pub fn estimate(&self, values: &[f64]) -> Result<f64> {
        match *self {
            LcbEstimator::EmpiricalQuantile { b } => lcb_empirical_quantile(values, b),
            LcbEstimator::Parametric { beta, spread } => lcb_parametric_with(values, beta, spread),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AcquisitionKind {
    Ei,
    Pi,
    Ucb(LcbEstimator),
    Ts,
}

impl AcquisitionKind {
    pub fn name(&self) -> &'static str {
        match self {
            AcquisitionKind::Ei => "ei",
            AcquisitionKind::Pi => "pi",
            AcquisitionKind::Ucb(_) => "ucb",
            AcquisitionKind::Ts => "ts",
        }
    }
}

/// Fidelity-independent acquisition choice, as written in run configs.
///
/// The quantile LCB level is given as a fraction so the same `AcqSpec` can be
/// evaluated at several fidelities: at fidelity `M` it uses order statistic
/// `b = fraction * (M + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AcqSpec {
    Ei,
    Pi,
    UcbQuantile { fraction: f64 },
    UcbParametric {
        beta: f64,
        #[serde(default)]
        spread: Spread,
    },
    Ts,
}

impl AcqSpec {
    pub fn kind_at(&self, m: usize) -> AcquisitionKind {
        match *self {
            AcqSpec::Ei => AcquisitionKind::Ei,
            AcqSpec::Pi => AcquisitionKind::Pi,
            AcqSpec::UcbQuantile { fraction } => AcquisitionKind::Ucb(
                LcbEstimator::EmpiricalQuantile { b: fraction * (m as f64 + 1.0) },
            ),
            AcqSpec::UcbParametric { beta, spread } => {
                AcquisitionKind::Ucb(LcbEstimator::Parametric { beta, spread })
            }
            AcqSpec::Ts => AcquisitionKind::Ts,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AcqSpec::Ei => "ei",
            AcqSpec::Pi => "pi",
            AcqSpec::UcbQuantile { .. } => "ucb_quantile",
            AcqSpec::UcbParametric { .. } => "ucb_parametric",
            AcqSpec::Ts => "ts",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AcqSpec::UcbQuantile { fraction } if !(0.0..=1.0).contains(&fraction) => Err(
                Error::InvalidConfig(format!("quantile fraction {fraction} outside [0, 1]")),
            ),
            AcqSpec::UcbParametric { beta, .. } if !(beta > 0.0 && beta.is_finite()) => {
                Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")))
            }
            _ => Ok(()),
        }
    }
}

/// Result of one acquisition evaluation with its call accounting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcqEvalRecord {
    pub value: f64,
    pub post_calls: usize,
    pub gen_calls: usize,
    pub fidelity_used: usize,
}

/// A posterior bound to its model: the `post`/`gen` pair acquisitions use.
#[derive(Clone, Copy)]
pub struct Predictive<'a> {
    pub model: &'a dyn Model,
    pub handle: &'a PosteriorHandle,
    pub objective: Objective,
}

impl<'a> Predictive<'a> {
    pub fn new(model: &'a dyn Model, handle: &'a PosteriorHandle) -> Self {
        Predictive { model, handle, objective: Objective::Identity }
    }

    pub fn with_objective(mut self, objective: Objective) -> Self {
        self.objective = objective;
        self
    }

    /// `M` draws of `f(y)` from the posterior predictive at `x`.
    pub fn sample_objectives(&self, x: &Input, m: usize, seed_base: Seed) -> Result<Sampled> {
        let draws = self.model.predictive_batch(x, self.handle, m, seed_base)?;
        self.extract(draws)
    }

    /// `M` draws of `f(y)` under one latent sample `post(iteration_seed)`.
    pub fn sample_objectives_ts(
        &self,
        x: &Input,
        m: usize,
        seed_base: Seed,
        iteration_seed: Seed,
    ) -> Result<Sampled> {
        let z = self.model.post(self.handle, iteration_seed);
        let mut draws = self.model.conditional_batch(x, &z, m, seed_base)?;
        draws.post_calls += 1;
        self.extract(draws)
    }

    fn extract(&self, draws: Draws) -> Result<Sampled> {
        let values = draws
            .observations
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let v = self.objective.apply(y);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFiniteDraw { index: i + 1, value: v })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Sampled { values, post_calls: draws.post_calls, gen_calls: draws.gen_calls })
    }
}

/// Objective values drawn for one acquisition evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    pub values: Vec<f64>,
    pub post_calls: usize,
    pub gen_calls: usize,
}

fn check_fidelity(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidConfig("fidelity M must be at least 1".into()));
    }
    Ok(())
}

fn record(value: f64, s: &Sampled, m: usize) -> AcqEvalRecord {
    AcqEvalRecord { value, post_calls: s.post_calls, gen_calls: s.gen_calls, fidelity_used: m }
}

/// Expected improvement: `sum_m 1[f(y_m) <= f_min] (f_min - f(y_m))`.
pub fn acq_ei(
    pred: &Predictive<'_>,
    x: &Input,
    f_min: f64,
    m: usize,
    seed_base: Seed,
) -> Result<AcqEvalRecord> {
    check_fidelity(m)?;
    let s = pred.sample_objectives(x, m, seed_base)?;
    Ok(record(lambda_reduce(&AcquisitionKind::Ei, &s.values, f_min)?, &s, m))
}

/// Probability of improvement: `sum_m 1[f(y_m) <= f_min]`.
pub fn acq_pi(
    pred: &Predictive<'_>,
    x: &Input,
    f_min: f64,
    m: usize,
    seed_base: Seed,
) -> Result<AcqEvalRecord> {
    check_fidelity(m)?;
    let s = pred.sample_objectives(x, m, seed_base)?;
    Ok(record(lambda_reduce(&AcquisitionKind::Pi, &s.values, f_min)?, &s, m))
}

/// Lower confidence bound of the predictive objective distribution.
pub fn acq_ucb(
    pred: &Predictive<'_>,
    x: &Input,
    estimator: LcbEstimator,
    m: usize,
    seed_base: Seed,
) -> Result<AcqEvalRecord> {
    check_fidelity(m)?;
    if m < estimator.min_samples() {
        return Err(Error::InvalidConfig(format!(
            "estimator needs at least {} samples, fidelity is {m}",
            estimator.min_samples()
        )));
    }
    let s = pred.sample_objectives(x, m, seed_base)?;
    Ok(record(estimator.estimate(&s.values)?, &s, m))
}

/// Thompson sampling: one latent draw `post(iteration_seed)` shared by every
/// call in the iteration, then `sum_m f(gen(x, z, seed_m))`.
pub fn acq_ts(
    pred: &Predictive<'_>,
    x: &Input,
    m: usize,
    seed_base: Seed,
    iteration_seed: Seed,
) -> Result<AcqEvalRecord> {
    check_fidelity(m)?;
    let s = pred.sample_objectives_ts(x, m, seed_base, iteration_seed)?;
    Ok(record(s.values.iter().sum(), &s, m))
}

/// Dispatches on `kind`. `iteration_seed` is only read by TS.
pub fn evaluate(
    kind: &AcquisitionKind,
    pred: &Predictive<'_>,
    x: &Input,
    f_min: f64,
    m: usize,
    seed_base: Seed,
    iteration_seed: Seed,
) -> Result<AcqEvalRecord> {
    match kind {
        AcquisitionKind::Ei => acq_ei(pred, x, f_min, m, seed_base),
        AcquisitionKind::Pi => acq_pi(pred, x, f_min, m, seed_base),
        AcquisitionKind::Ucb(est) => acq_ucb(pred, x, *est, m, seed_base),
        AcquisitionKind::Ts => acq_ts(pred, x, m, seed_base, iteration_seed),
    }
}

/// The final reduction of each acquisition applied to pre-drawn objectives.
pub fn lambda_reduce(kind: &AcquisitionKind, objectives: &[f64], f_min: f64) -> Result<f64> {
    if objectives.is_empty() {
        return Err(Error::InvalidInput("no objective samples to reduce".into()));
    }
    Ok(match kind {
        AcquisitionKind::Ei => objectives.iter().filter(|&&v| v <= f_min).map(|&v| f_min - v).sum(),
        AcquisitionKind::Pi => objectives.iter().filter(|&&v| v <= f_min).count() as f64,
        AcquisitionKind::Ucb(est) => est.estimate(objectives)?,
        AcquisitionKind::Ts => objectives.iter().sum(),
    })
}

/// Maps a raw acquisition value at fidelity `m` to the minimized score.
///
/// Sums are divided by `m` so that values computed at different fidelities
/// are comparable; EI and PI are negated since they are maximized.
pub fn signed_score(kind: &AcquisitionKind, value: f64, m: usize) -> f64 {
    let m = m as f64;
    match kind {
        AcquisitionKind::Ei | AcquisitionKind::Pi => -value / m,
        AcquisitionKind::Ucb(_) => value,
        AcquisitionKind::Ts => value / m,
    }
}

/// Order-statistic LCB. `b` is 1-based; values of `b` outside `[1, M]` are
/// clamped to the nearest order statistic.
pub fn lcb_empirical_quantile(values: &[f64], b: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("empirical quantile of an empty list".into()));
    }
    if b.is_nan() {
        return Err(Error::InvalidInput("quantile level is NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let b = b.clamp(1.0, n);
    let lo = b.floor();
    let at = |k: f64| sorted[k as usize - 1];
    if b == lo {
        Ok(at(b))
    } else {
        Ok(0.5 * (at(lo) + at(lo + 1.0)))
    }
}

/// `mean - beta * sample_variance` with the unbiased `1/(M-1)` divisor.
pub fn lcb_parametric(values: &[f64], beta: f64) -> Result<f64> {
    lcb_parametric_with(values, beta, Spread::Variance)
}

pub fn lcb_parametric_with(values: &[f64], beta: f64, spread: Spread) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "parametric LCB needs at least 2 samples, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(match spread {
        Spread::Variance => mean - beta * var,
        Spread::Std => mean - beta * var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, Observation};
    use crate::model::LatentSample;
    use proptest::prelude::*;

    #[test]
    fn ei_reduction_examples() {
        let ei = &AcquisitionKind::Ei;
        assert_eq!(lambda_reduce(ei, &[1.0, 2.0, 3.0], 0.0).unwrap(), 0.0);
        assert_eq!(lambda_reduce(ei, &[-2.0, -1.0, 0.0, 1.0], 0.0).unwrap(), 3.0);
    }

    #[test]
    fn pi_reduction_examples() {
        let pi = &AcquisitionKind::Pi;
        assert_eq!(lambda_reduce(pi, &[-1.0, 2.0, 3.0], 0.0).unwrap(), 1.0);
        assert_eq!(lambda_reduce(pi, &[1.0, 2.0], 0.0).unwrap(), 0.0);
        assert_eq!(lambda_reduce(pi, &[-5.0; 7], 0.0).unwrap(), 7.0);
    }

    #[test]
    fn ucb_reduction_delegates() {
        let est = LcbEstimator::EmpiricalQuantile { b: 2.0 };
        let v = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(
            lambda_reduce(&AcquisitionKind::Ucb(est), &v, 0.0).unwrap(),
            est.estimate(&v).unwrap()
        );
    }

    #[test]
    fn reduce_rejects_empty() {
        assert!(lambda_reduce(&AcquisitionKind::Ts, &[], 0.0).is_err());
    }

    #[test]
    fn empirical_quantile_examples() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(lcb_empirical_quantile(&v, 2.0).unwrap(), 2.0);
        assert_eq!(lcb_empirical_quantile(&v, 2.5).unwrap(), 2.5);
        assert_eq!(lcb_empirical_quantile(&[3.0, 1.0, 2.0], 0.5).unwrap(), 1.0);
        assert_eq!(lcb_empirical_quantile(&[3.0, 1.0, 2.0], 0.0).unwrap(), 1.0);
        assert_eq!(lcb_empirical_quantile(&[3.0, 1.0, 2.0], 4.0).unwrap(), 3.0);
        assert_eq!(lcb_empirical_quantile(&[3.0, 1.0, 2.0], 3.5).unwrap(), 3.0);
        assert!(lcb_empirical_quantile(&[], 1.0).is_err());
    }

    #[test]
    fn parametric_examples() {
        // mean 1, unbiased variance 4
        assert_eq!(lcb_parametric(&[-1.0, 1.0, 3.0], 0.5).unwrap(), -1.0);

        let w = [-1.0, 3.0];
        assert_eq!(lcb_parametric(&w, 0.5).unwrap(), -3.0);

        assert_eq!(lcb_parametric(&[2.5; 6], 3.0).unwrap(), 2.5);
        assert_eq!(lcb_parametric(&[1.0, 2.0, 6.0], 0.0).unwrap(), 3.0);
        assert!(lcb_parametric(&[1.0], 1.0).is_err());
        assert_eq!(lcb_parametric_with(&w, 0.5, Spread::Std).unwrap(), 1.0 - 0.5 * 8f64.sqrt());
    }

    /// Deterministic toy: gen returns the pool value at `z`, ignoring noise.
    struct Constant;

    impl Model for Constant {
        fn id(&self) -> String {
            "constant".into()
        }
        fn infer(&self, _: &Dataset, _: Seed) -> Result<PosteriorHandle> {
            PosteriorHandle::pool(vec![LatentSample::builder().scalar("c", 2.5).build()])
        }
        fn gen(&self, _: &Input, z: &LatentSample, _: Seed) -> Result<Observation> {
            Ok(Observation::new(z.scalar("c")?))
        }
    }

    struct NanModel;

    impl Model for NanModel {
        fn id(&self) -> String {
            "nan".into()
        }
        fn infer(&self, _: &Dataset, _: Seed) -> Result<PosteriorHandle> {
            PosteriorHandle::pool(vec![LatentSample::builder().build()])
        }
        fn gen(&self, _: &Input, _: &LatentSample, s: Seed) -> Result<Observation> {
            Ok(Observation::new(if s.uniform() < 0.5 { f64::NAN } else { 0.0 }))
        }
    }

    #[test]
    fn call_accounting() {
        let h = Constant.infer(&Dataset::new(), Seed(0)).unwrap();
        let p = Predictive::new(&Constant, &h);
        let x = Input::new(vec![0.0]).unwrap();
        for kind in [
            AcquisitionKind::Ei,
            AcquisitionKind::Pi,
            AcquisitionKind::Ucb(LcbEstimator::EmpiricalQuantile { b: 1.0 }),
        ] {
            let r = evaluate(&kind, &p, &x, 0.0, 17, Seed(1), Seed(2)).unwrap();
            assert_eq!((r.post_calls, r.gen_calls, r.fidelity_used), (17, 17, 17));
        }
        let r = acq_ts(&p, &x, 17, Seed(1), Seed(2)).unwrap();
        assert_eq!((r.post_calls, r.gen_calls), (1, 17));
        assert_eq!(r.value, 17.0 * 2.5);
    }

    #[test]
    fn ts_is_stable_within_iteration() {
        let h = Constant.infer(&Dataset::new(), Seed(0)).unwrap();
        let p = Predictive::new(&Constant, &h);
        let x = Input::new(vec![0.3]).unwrap();
        let a = acq_ts(&p, &x, 5, Seed(9), Seed(4)).unwrap();
        let b = acq_ts(&p, &x, 5, Seed(9), Seed(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_draw_is_error() {
        let h = NanModel.infer(&Dataset::new(), Seed(0)).unwrap();
        let p = Predictive::new(&NanModel, &h);
        let x = Input::new(vec![0.0]).unwrap();
        let err = acq_ei(&p, &x, 0.0, 64, Seed(3)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteDraw { .. }));
    }

    #[test]
    fn zero_fidelity_rejected() {
        let h = Constant.infer(&Dataset::new(), Seed(0)).unwrap();
        let p = Predictive::new(&Constant, &h);
        let x = Input::new(vec![0.0]).unwrap();
        assert!(acq_pi(&p, &x, 0.0, 0, Seed(0)).is_err());
        let est = LcbEstimator::Parametric { beta: 1.0, spread: Spread::Variance };
        assert!(acq_ucb(&p, &x, est, 1, Seed(0)).is_err());
    }

    proptest! {
        #[test]
        fn quantile_within_range(
            values in prop::collection::vec(-1e6f64..1e6, 1..60),
            b in -1.0f64..70.0,
        ) {
            let q = lcb_empirical_quantile(&values, b).unwrap();
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(q >= lo && q <= hi);
        }

        #[test]
        fn argmin_invariant_to_fidelity_scaling(
            scores in prop::collection::vec(0.0f64..100.0, 1..30),
            m in 1usize..5000,
        ) {
            let raw: Vec<f64> = scores.iter().map(|s| -s).collect();
            let scaled: Vec<f64> =
                scores.iter().map(|&s| signed_score(&AcquisitionKind::Ei, s, m)).collect();
            let argmin = |v: &[f64]| {
                v.iter().enumerate().fold(0, |best, (i, x)| if *x < v[best] { i } else { best })
            };
            prop_assert_eq!(argmin(&raw), argmin(&scaled));
        }
    }
}
