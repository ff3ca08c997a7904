//! Multi-fidelity acquisition evaluation.
//!
//! An evaluation starts with few predictive draws and only pays for more
//! while a bootstrap lower confidence bound of the acquisition estimate
//! still reaches below the best score seen so far in the optimizer run.
//! All values here are signed scores (see [`signed_score`]): smaller is
//! better and comparable across fidelities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    lambda_reduce, lcb_empirical_quantile, signed_score, AcqEvalRecord, AcqSpec, AcquisitionKind,
    Predictive, Sampled,
};
use crate::data::Input;
use crate::error::{Error, Result};
use crate::seed::Seed;

const BOOTSTRAP_STREAM: u64 = 0xB007;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelitySchedule {
    fidelities: Vec<usize>,
    #[serde(default = "default_reps")]
    bootstrap_reps: usize,
    #[serde(default = "default_quantile")]
    lcb_quantile: f64,
}

fn default_reps() -> usize {
    200
}

fn default_quantile() -> f64 {
    0.1
}

impl Default for FidelitySchedule {
    fn default() -> Self {
        FidelitySchedule { fidelities: vec![10, 100, 1000], bootstrap_reps: default_reps(), lcb_quantile: 0.1 }
    }
}

impl FidelitySchedule {
    pub fn new(fidelities: Vec<usize>, bootstrap_reps: usize, lcb_quantile: f64) -> Result<Self> {
        let s = FidelitySchedule { fidelities, bootstrap_reps, lcb_quantile };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fidelities.is_empty() {
            return Err(Error::InvalidConfig("fidelity schedule is empty".into()));
        }
        if self.fidelities[0] == 0 {
            return Err(Error::InvalidConfig("fidelities must be positive".into()));
        }
        if self.fidelities.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "fidelities must be strictly increasing: {:?}",
                self.fidelities
            )));
        }
        if self.bootstrap_reps == 0 {
            return Err(Error::InvalidConfig("bootstrap_reps must be at least 1".into()));
        }
        if !(self.lcb_quantile > 0.0 && self.lcb_quantile < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "lcb_quantile must lie in (0, 0.5), got {}",
                self.lcb_quantile
            )));
        }
        Ok(())
    }

    pub fn fidelities(&self) -> &[usize] {
        &self.fidelities
    }

    pub fn max_fidelity(&self) -> usize {
        *self.fidelities.last().expect("validated non-empty")
    }

    pub fn bootstrap_reps(&self) -> usize {
        self.bootstrap_reps
    }

    pub fn lcb_quantile(&self) -> f64 {
        self.lcb_quantile
    }
}

/// Running minimum of the scores returned during one optimizer run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcqMinState {
    a_min: f64,
}

impl Default for AcqMinState {
    fn default() -> Self {
        AcqMinState { a_min: f64::INFINITY }
    }
}

impl AcqMinState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts from a known minimum instead of `+inf`.
    pub fn with_min(a_min: f64) -> Self {
        AcqMinState { a_min }
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    pub fn observe(&mut self, value: f64) {
        if value < self.a_min {
            self.a_min = value;
        }
    }
}

/// Everything an acquisition draw needs besides `x` and the fidelity.
#[derive(Clone, Copy)]
pub struct AcqContext<'a> {
    pub pred: Predictive<'a>,
    pub spec: AcqSpec,
    pub f_min: f64,
    pub iteration_seed: Seed,
}

impl AcqContext<'_> {
    fn draw(&self, x: &Input, m: usize, seed_base: Seed) -> Result<Sampled> {
        match self.spec {
            AcqSpec::Ts => self.pred.sample_objectives_ts(x, m, seed_base, self.iteration_seed),
            _ => self.pred.sample_objectives(x, m, seed_base),
        }
    }

    /// Single-fidelity evaluation returning the signed score.
    pub fn evaluate(&self, x: &Input, m: usize, seed_base: Seed) -> Result<AcqEvalRecord> {
        if m == 0 {
            return Err(Error::InvalidConfig("fidelity M must be at least 1".into()));
        }
        let kind = self.spec.kind_at(m);
        let s = self.draw(x, m, seed_base)?;
        let raw = lambda_reduce(&kind, &s.values, self.f_min)?;
        Ok(AcqEvalRecord {
            value: signed_score(&kind, raw, m),
            post_calls: s.post_calls,
            gen_calls: s.gen_calls,
            fidelity_used: m,
        })
    }
}

/// Bootstrap LCB of the signed acquisition score from already-drawn
/// objective values: the `q`-quantile of `reps` resampled reductions.
pub fn bootstrap_lcb_of(
    kind: &AcquisitionKind,
    values: &[f64],
    reps: usize,
    q: f64,
    f_min: f64,
    seed: Seed,
) -> Result<f64> {
    if values.is_empty() || reps == 0 {
        return Err(Error::InvalidInput("bootstrap needs samples and replicates".into()));
    }
    let n = values.len();
    let mut rng = seed.derive(&[BOOTSTRAP_STREAM]).rng();
    let mut resample = vec![0.0; n];
    let mut scores = Vec::with_capacity(reps);
    for _ in 0..reps {
        for slot in resample.iter_mut() {
            *slot = values[rng.random_range(0..n)];
        }
        scores.push(signed_score(kind, lambda_reduce(kind, &resample, f_min)?, n));
    }
    lcb_empirical_quantile(&scores, q * reps as f64)
}

/// Draws `m_f` predictive samples at `x` and returns the bootstrap LCB of
/// the signed acquisition score.
pub fn lcb_bootstrap(
    ctx: &AcqContext<'_>,
    x: &Input,
    m_f: usize,
    reps: usize,
    q: f64,
    seed_base: Seed,
) -> Result<f64> {
    if m_f == 0 {
        return Err(Error::InvalidConfig("fidelity M must be at least 1".into()));
    }
    let s = ctx.draw(x, m_f, seed_base)?;
    bootstrap_lcb_of(&ctx.spec.kind_at(m_f), &s.values, reps, q, ctx.f_min, seed_base)
}

/// Multi-fidelity evaluation of the signed acquisition score at `x`.
///
/// Fidelity `f` draws fresh samples with `seed_base.derive([f])`. The
/// ascent stops at the first fidelity whose bootstrap LCB exceeds
/// `state.a_min`, or at the last fidelity; the returned score reuses the
/// draws made at that fidelity. Call counts cover every fidelity visited.
pub fn acq_mf(
    ctx: &AcqContext<'_>,
    x: &Input,
    schedule: &FidelitySchedule,
    state: &mut AcqMinState,
    seed_base: Seed,
) -> Result<AcqEvalRecord> {
    let fidelities = schedule.fidelities();
    let mut post_calls = 0;
    let mut gen_calls = 0;
    for (f, &m_f) in fidelities.iter().enumerate() {
        let seed_f = seed_base.derive(&[f as u64 + 1]);
        let s = ctx.draw(x, m_f, seed_f)?;
        post_calls += s.post_calls;
        gen_calls += s.gen_calls;
        let kind = ctx.spec.kind_at(m_f);
        let last = f + 1 == fidelities.len();
        let stop = last || {
            let lcb = bootstrap_lcb_of(
                &kind,
                &s.values,
                schedule.bootstrap_reps(),
                schedule.lcb_quantile(),
                ctx.f_min,
                seed_f,
            )?;
            lcb > state.a_min()
        };
        if stop {
            let value = signed_score(&kind, lambda_reduce(&kind, &s.values, ctx.f_min)?, m_f);
            state.observe(value);
            return Ok(AcqEvalRecord { value, post_calls, gen_calls, fidelity_used: m_f });
        }
    }
    unreachable!("the last fidelity always stops the ascent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, Observation};
    use crate::model::{LatentSample, Model, PosteriorHandle};
    use proptest::prelude::*;

    /// gen returns `h(x) = x0` exactly.
    struct Deterministic;

    impl Model for Deterministic {
        fn id(&self) -> String {
            "det".into()
        }
        fn infer(&self, _: &Dataset, _: Seed) -> Result<PosteriorHandle> {
            PosteriorHandle::pool(vec![LatentSample::builder().build()])
        }
        fn gen(&self, x: &Input, _: &LatentSample, _: Seed) -> Result<Observation> {
            Ok(Observation::new(x[0]))
        }
    }

    /// gen returns x0 + a standard normal draw.
    struct Noisy;

    impl Model for Noisy {
        fn id(&self) -> String {
            "noisy".into()
        }
        fn infer(&self, _: &Dataset, _: Seed) -> Result<PosteriorHandle> {
            PosteriorHandle::pool(vec![LatentSample::builder().build()])
        }
        fn gen(&self, x: &Input, _: &LatentSample, s: Seed) -> Result<Observation> {
            Ok(Observation::new(x[0] + s.std_normal()))
        }
    }

    fn input(v: f64) -> Input {
        Input::new(vec![v]).unwrap()
    }

    #[test]
    fn schedule_validation() {
        assert!(FidelitySchedule::new(vec![], 50, 0.1).is_err());
        assert!(FidelitySchedule::new(vec![10, 10], 50, 0.1).is_err());
        assert!(FidelitySchedule::new(vec![0, 10], 50, 0.1).is_err());
        assert!(FidelitySchedule::new(vec![10], 0, 0.1).is_err());
        assert!(FidelitySchedule::new(vec![10], 5, 0.5).is_err());
        FidelitySchedule::default().validate().unwrap();
    }

    #[test]
    fn constant_draws_give_constant_lcb() {
        let v = [2.0; 30];
        let lcb = bootstrap_lcb_of(&AcquisitionKind::Ts, &v, 40, 0.1, 0.0, Seed(1)).unwrap();
        assert_eq!(lcb, 2.0);
    }

    #[test]
    fn two_fidelity_call_counts() {
        let h = Deterministic.infer(&Dataset::new(), Seed(0)).unwrap();
        let ctx = AcqContext {
            pred: Predictive::new(&Deterministic, &h),
            spec: AcqSpec::Ei,
            f_min: 0.0,
            iteration_seed: Seed(0),
        };
        let sched = FidelitySchedule::new(vec![10, 1000], 50, 0.1).unwrap();

        // score at x = -0.5 is -0.5; a_min = -0.4 makes it plausible
        let mut near = AcqMinState::with_min(-0.4);
        let r = acq_mf(&ctx, &input(-0.5), &sched, &mut near, Seed(1)).unwrap();
        assert_eq!((r.gen_calls, r.post_calls, r.fidelity_used), (1010, 1010, 1000));
        assert_eq!(near.a_min(), -0.5);

        let mut far = AcqMinState::with_min(-0.6);
        let r = acq_mf(&ctx, &input(-0.5), &sched, &mut far, Seed(1)).unwrap();
        assert_eq!((r.gen_calls, r.fidelity_used), (10, 10));
        assert_eq!(r.value, -0.5);
        assert_eq!(far.a_min(), -0.6);
    }

    #[test]
    fn first_evaluation_escalates_to_top() {
        let h = Noisy.infer(&Dataset::new(), Seed(0)).unwrap();
        let ctx = AcqContext {
            pred: Predictive::new(&Noisy, &h),
            spec: AcqSpec::Pi,
            f_min: 0.0,
            iteration_seed: Seed(0),
        };
        let sched = FidelitySchedule::default();
        let mut state = AcqMinState::new();
        let r = acq_mf(&ctx, &input(3.0), &sched, &mut state, Seed(2)).unwrap();
        assert_eq!(r.gen_calls, 1110);
        assert_eq!(r.fidelity_used, 1000);
        assert_eq!(state.a_min(), r.value);
    }

    #[test]
    fn ts_counts_one_post_per_fidelity() {
        let h = Noisy.infer(&Dataset::new(), Seed(0)).unwrap();
        let ctx = AcqContext {
            pred: Predictive::new(&Noisy, &h),
            spec: AcqSpec::Ts,
            f_min: 0.0,
            iteration_seed: Seed(5),
        };
        let sched = FidelitySchedule::new(vec![5, 50], 20, 0.1).unwrap();
        let r = acq_mf(&ctx, &input(0.0), &sched, &mut AcqMinState::new(), Seed(2)).unwrap();
        assert_eq!((r.post_calls, r.gen_calls), (2, 55));
    }

    #[test]
    fn a_min_tracks_minimum_of_returned_values() {
        let h = Noisy.infer(&Dataset::new(), Seed(0)).unwrap();
        let ctx = AcqContext {
            pred: Predictive::new(&Noisy, &h),
            spec: AcqSpec::UcbQuantile { fraction: 0.2 },
            f_min: 0.0,
            iteration_seed: Seed(0),
        };
        let sched = FidelitySchedule::new(vec![8, 64], 30, 0.1).unwrap();
        let mut state = AcqMinState::new();
        let mut seen = f64::INFINITY;
        for i in 0..40 {
            let x = input((i as f64 * 0.37).sin() * 2.0);
            let r = acq_mf(&ctx, &x, &sched, &mut state, Seed(i)).unwrap();
            seen = seen.min(r.value);
            assert_eq!(state.a_min(), seen);
            assert!(r.gen_calls <= 72);
        }
    }

    proptest! {
        #[test]
        fn lower_a_min_never_raises_fidelity(x0 in -3.0f64..3.0, a in -3.0f64..3.0, d in 0.0f64..3.0, seed in 0u64..1000) {
            let h = Noisy.infer(&Dataset::new(), Seed(0)).unwrap();
            let ctx = AcqContext {
                pred: Predictive::new(&Noisy, &h),
                spec: AcqSpec::Ts,
                f_min: 0.0,
                iteration_seed: Seed(0),
            };
            let sched = FidelitySchedule::new(vec![4, 16, 64], 20, 0.1).unwrap();
            let hi = acq_mf(&ctx, &input(x0), &sched, &mut AcqMinState::with_min(a), Seed(seed)).unwrap();
            let lo = acq_mf(&ctx, &input(x0), &sched, &mut AcqMinState::with_min(a - d), Seed(seed)).unwrap();
            prop_assert!(lo.fidelity_used <= hi.fidelity_used);
            prop_assert!(hi.gen_calls <= 84);
        }
    }
}
