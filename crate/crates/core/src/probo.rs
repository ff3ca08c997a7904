//! The outer BO loop: one `infer` per iteration, acquisition optimization
//! through `post`/`gen` only, then a system query.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::acquisition::{AcqSpec, Predictive};
use crate::data::{Dataset, Input, Objective, Observation};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::multifidelity::{acq_mf, AcqContext, AcqMinState, FidelitySchedule};
use crate::search::{optimize_acq, OptimizerConfig, SearchBox};
use crate::seed::Seed;

/// A black-box system the loop queries.
pub trait System: Send + Sync {
    fn id(&self) -> String;

    fn search_box(&self) -> &SearchBox;

    /// One (possibly noisy or corrupted) observation at `x`.
    fn evaluate(&self, x: &Input, seed: Seed) -> Observation;

    /// Ground-truth objective value at `x`, in the system's own sign. Used
    /// for reporting only and never shown to models.
    fn clean_objective(&self, x: &Input) -> f64;

    /// How `f(y)` is read off an observation for minimization.
    fn objective(&self) -> Objective {
        Objective::Identity
    }
}

/// Fixed fidelity or a multi-fidelity schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum FidelityMode {
    Fixed { m: usize },
    Mf(FidelitySchedule),
}

impl FidelityMode {
    pub fn name(&self) -> &'static str {
        match self {
            FidelityMode::Fixed { .. } => "fixed",
            FidelityMode::Mf(_) => "mf",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FidelityMode::Fixed { m: 0 } => Err(Error::InvalidConfig("fidelity M must be at least 1".into())),
            FidelityMode::Fixed { .. } => Ok(()),
            FidelityMode::Mf(s) => s.validate(),
        }
    }
}

impl fmt::Display for FidelityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FidelityMode::Fixed { m } => write!(f, "fixed{m}"),
            FidelityMode::Mf(s) => {
                let parts: Vec<String> = s.fidelities().iter().map(|m| m.to_string()).collect();
                write!(f, "mf{}", parts.join("-"))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// BO iterations `N`.
    pub iterations: usize,
    /// Uniform random queries seeding the dataset.
    pub n_init: usize,
    pub acq: AcqSpec,
    pub fidelity: FidelityMode,
    pub optimizer: OptimizerConfig,
    pub seed: Seed,
}

impl RunConfig {
    pub fn new(iterations: usize, acq: AcqSpec, fidelity: FidelityMode, seed: Seed) -> Self {
        RunConfig {
            iterations,
            n_init: 3,
            acq,
            fidelity,
            optimizer: OptimizerConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 {
            return Err(Error::InvalidConfig("n_init must be at least 1".into()));
        }
        if self.optimizer.budget == 0 {
            return Err(Error::InvalidConfig("optimizer budget must be at least 1".into()));
        }
        self.acq.validate()?;
        self.fidelity.validate()
    }
}

/// One BO iteration. Counts are cumulative over the run.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub x: Input,
    pub observation: Observation,
    /// `f(y)` of the observation as the models saw it.
    pub observed_f: f64,
    /// Ground-truth objective at `x`, minimization sign.
    pub clean_f: f64,
    /// Minimum of `clean_f` over iterations so far.
    pub best_f: f64,
    pub inf_calls: usize,
    pub post_calls: usize,
    pub gen_calls: usize,
    pub wall_ms: u64,
    /// The optimizer failed and `x` was drawn uniformly instead.
    pub fallback: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn inf_calls(&self) -> usize {
        self.records.last().map_or(0, |r| r.inf_calls)
    }

    pub fn gen_calls(&self) -> usize {
        self.records.last().map_or(0, |r| r.gen_calls)
    }

    pub fn post_calls(&self) -> usize {
        self.records.last().map_or(0, |r| r.post_calls)
    }
}

/// Best clean objective over iterations `1..=n`.
pub fn best_so_far(trace: &RunTrace, n: usize) -> Result<f64> {
    if n == 0 || n > trace.len() {
        return Err(Error::InvalidInput(format!("iteration {n} outside 1..={}", trace.len())));
    }
    Ok(trace.records[n - 1].best_f)
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dataset: Dataset,
    pub trace: RunTrace,
}

/// A failed run with everything recorded before the failure.
#[derive(Clone, Debug)]
pub struct RunError {
    pub error: Error,
    pub partial: RunOutput,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} iterations)", self.error, self.partial.trace.len())
    }
}

impl std::error::Error for RunError {}

// Stream labels. Candidate seeds use `[iteration, candidate]` and the TS
// seed uses `[iteration]`; the streams below use a leading label no
// iteration number reaches.
const INIT_X: u64 = 1 << 40;
const INIT_Y: u64 = (1 << 40) + 1;
const INFER: u64 = (1 << 40) + 2;
const OPTIMIZE: u64 = (1 << 40) + 3;
const QUERY: u64 = (1 << 40) + 4;
const FALLBACK: u64 = (1 << 40) + 5;

/// Runs `config.iterations` BO iterations of `model` against `system`.
pub fn probo_run(
    config: &RunConfig,
    system: &dyn System,
    model: &dyn Model,
) -> std::result::Result<RunOutput, Box<RunError>> {
    let master = config.seed;
    let fail = |error: Error, dataset: &Dataset, trace: &RunTrace| {
        Box::new(RunError { error, partial: RunOutput { dataset: dataset.clone(), trace: trace.clone() } })
    };
    let mut data = Dataset::new();
    let mut trace = RunTrace::default();
    if let Err(e) = config.validate() {
        return Err(fail(e, &data, &trace));
    }
    let bx = system.search_box();
    let objective = system.objective();

    for i in 0..config.n_init {
        let x = bx.sample(&mut master.derive(&[INIT_X, i as u64]).rng());
        let y = system.evaluate(&x, master.derive(&[INIT_Y, i as u64]));
        data = data.append(x, y).map_err(|e| fail(e, &data, &trace))?;
    }

    let (mut inf_calls, mut post_calls, mut gen_calls) = (0, 0, 0);
    let mut best = f64::INFINITY;
    for n in 1..=config.iterations {
        let start = Instant::now();
        let nl = n as u64;
        let handle = model.infer(&data, master.derive(&[INFER, nl])).map_err(|e| fail(e, &data, &trace))?;
        inf_calls += 1;
        let f_min = data.f_min(objective).map_err(|e| fail(e, &data, &trace))?;
        let ctx = AcqContext {
            pred: Predictive::new(model, &handle).with_objective(objective),
            spec: config.acq,
            f_min,
            iteration_seed: master.derive(&[nl]),
        };
        let mut state = AcqMinState::new();
        let result = optimize_acq(
            |x, idx| {
                let seed_base = master.derive(&[nl, idx as u64]);
                match &config.fidelity {
                    FidelityMode::Fixed { m } => ctx.evaluate(x, *m, seed_base),
                    FidelityMode::Mf(schedule) => acq_mf(&ctx, x, schedule, &mut state, seed_base),
                }
            },
            bx,
            &config.optimizer,
            master.derive(&[OPTIMIZE, nl]),
        );
        let (x, fallback) = match result {
            Ok(opt) => {
                post_calls += opt.totals.post_calls;
                gen_calls += opt.totals.gen_calls;
                (opt.x, false)
            }
            Err(e) => {
                log::warn!("iteration {n}: acquisition optimization failed ({e}); querying at random");
                (bx.sample(&mut master.derive(&[FALLBACK, nl]).rng()), true)
            }
        };
        let y = system.evaluate(&x, master.derive(&[QUERY, nl]));
        let observed_f = objective.apply(&y);
        let clean_f = objective.of_value(system.clean_objective(&x));
        best = best.min(clean_f);
        data = data.append(x.clone(), y.clone()).map_err(|e| fail(e, &data, &trace))?;
        trace.records.push(IterationRecord {
            iteration: n,
            x,
            observation: y,
            observed_f,
            clean_f,
            best_f: best,
            inf_calls,
            post_calls,
            gen_calls,
            wall_ms: start.elapsed().as_millis() as u64,
            fallback,
        });
    }
    Ok(RunOutput { dataset: data, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::GaussianToy;

    struct Quadratic(SearchBox);

    impl System for Quadratic {
        fn id(&self) -> String {
            "quadratic".into()
        }
        fn search_box(&self) -> &SearchBox {
            &self.0
        }
        fn evaluate(&self, x: &Input, seed: Seed) -> Observation {
            Observation::new(self.clean_objective(x) + 0.01 * seed.std_normal())
        }
        fn clean_objective(&self, x: &Input) -> f64 {
            (x[0] - 0.3).powi(2)
        }
    }

    /// Counts `infer` calls.
    struct Counting(GaussianToy, std::sync::atomic::AtomicUsize);

    impl Model for Counting {
        fn id(&self) -> String {
            "counting".into()
        }
        fn infer(&self, d: &Dataset, s: Seed) -> Result<crate::model::PosteriorHandle> {
            self.1.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            self.0.infer(d, s)
        }
        fn gen(&self, x: &Input, z: &crate::model::LatentSample, s: Seed) -> Result<Observation> {
            self.0.gen(x, z, s)
        }
    }

    fn config(n: usize) -> RunConfig {
        let mut c = RunConfig::new(n, AcqSpec::Ei, FidelityMode::Fixed { m: 20 }, Seed(11));
        c.optimizer.budget = 10;
        c.optimizer.refine_rounds = 3;
        c
    }

    #[test]
    fn zero_iterations_returns_initial_data() {
        let sys = Quadratic(SearchBox::cube(0.0, 1.0, 1).unwrap());
        let model = GaussianToy::new(0.0, 1.0, 1.0).unwrap();
        let out = probo_run(&config(0), &sys, &model).unwrap();
        assert_eq!(out.dataset.len(), 3);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn one_infer_per_iteration() {
        let sys = Quadratic(SearchBox::cube(0.0, 1.0, 1).unwrap());
        let model = Counting(GaussianToy::new(0.0, 1.0, 1.0).unwrap(), Default::default());
        let out = probo_run(&config(7), &sys, &model).unwrap();
        assert_eq!(model.1.load(std::sync::atomic::Ordering::SeqCst), 7);
        assert_eq!(out.trace.inf_calls(), 7);
        assert_eq!(out.dataset.len(), 10);
        // fixed fidelity: every evaluation costs exactly M
        assert_eq!(out.trace.gen_calls(), 7 * 13 * 20);
    }

    #[test]
    fn runs_are_deterministic_and_best_is_monotone() {
        let sys = Quadratic(SearchBox::cube(0.0, 1.0, 1).unwrap());
        let model = GaussianToy::new(0.0, 1.0, 1.0).unwrap();
        let a = probo_run(&config(5), &sys, &model).unwrap();
        let b = probo_run(&config(5), &sys, &model).unwrap();
        assert_eq!(a.dataset, b.dataset);
        for (ra, rb) in a.trace.records.iter().zip(&b.trace.records) {
            assert_eq!((&ra.x, ra.best_f, ra.gen_calls), (&rb.x, rb.best_f, rb.gen_calls));
        }
        assert_eq!(best_so_far(&a.trace, 1).unwrap(), a.trace.records[0].clean_f);
        for n in 2..=5 {
            assert!(best_so_far(&a.trace, n).unwrap() <= best_so_far(&a.trace, n - 1).unwrap());
        }
        assert!(best_so_far(&a.trace, 0).is_err());
    }

    #[test]
    fn invalid_config_is_reported() {
        let sys = Quadratic(SearchBox::cube(0.0, 1.0, 1).unwrap());
        let model = GaussianToy::new(0.0, 1.0, 1.0).unwrap();
        let mut c = config(2);
        c.n_init = 0;
        assert!(matches!(probo_run(&c, &sys, &model), Err(e) if matches!(e.error, Error::InvalidConfig(_))));
    }
}
