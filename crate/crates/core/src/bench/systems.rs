//! Closed-form synthetic systems.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::constants as k;
use crate::data::{AuxKey, AuxValue, Input, Objective, Observation};
use crate::error::{Error, Result};
use crate::probo::System;
use crate::search::SearchBox;
use crate::seed::Seed;
use crate::zoo::warp::split_task;
use crate::zoo::{BasinParams, PhaseShiftParams};

/// Maximizes `f` over `bx`: a dense grid (or random samples above
/// `F_MAX_GRID_MAX_DIM`), then a compass search from the best point.
pub fn box_maximum(f: impl Fn(&[f64]) -> f64, bx: &SearchBox) -> (Vec<f64>, f64) {
    let d = bx.dim();
    let mut best_x = bx.center().into_vec();
    let mut best = f(&best_x);
    let consider = |x: Vec<f64>, best_x: &mut Vec<f64>, best: &mut f64| {
        let v = f(&x);
        if v > *best {
            *best = v;
            *best_x = x;
        }
    };
    let mut step: Vec<f64>;
    if d <= k::F_MAX_GRID_MAX_DIM {
        let g = k::F_MAX_GRID_POINTS;
        step = (0..d).map(|j| bx.width(j) / (g - 1) as f64).collect();
        let total = g.pow(d as u32);
        for flat in 0..total {
            let mut rem = flat;
            let x = (0..d)
                .map(|j| {
                    let i = rem % g;
                    rem /= g;
                    bx.bounds()[j].0 + i as f64 * step[j]
                })
                .collect();
            consider(x, &mut best_x, &mut best);
        }
    } else {
        let mut rng = Seed(k::F_MAX_SEED).rng();
        for _ in 0..k::F_MAX_RANDOM_SAMPLES {
            consider(bx.sample(&mut rng).into_vec(), &mut best_x, &mut best);
        }
        step = (0..d).map(|j| bx.width(j) / 20.0).collect();
    }
    let mut halvings = 0;
    while halvings < k::F_MAX_REFINE_STEPS {
        let mut moved = false;
        for j in 0..d {
            for sign in [1.0, -1.0] {
                let mut x = best_x.clone();
                x[j] += sign * step[j];
                bx.clip(&mut x);
                let before = best;
                consider(x, &mut best_x, &mut best);
                moved |= best > before;
            }
        }
        if !moved {
            step.iter_mut().for_each(|s| *s *= 0.5);
            halvings += 1;
        }
    }
    (best_x, best)
}

/// `||x||_2 - mean_i cos(x_i)`, minimized at the origin with value -1.
pub fn contaminated_f(x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    norm - x.iter().map(|v| v.cos()).sum::<f64>() / x.len() as f64
}

/// Returns `contaminated_f` with probability `1 - p`, otherwise a uniform
/// draw on `[f_max / 10, f_max]`.
#[derive(Clone, Debug)]
pub struct ContaminatedSystem {
    search_box: SearchBox,
    p: f64,
    f_max: f64,
}

impl ContaminatedSystem {
    pub fn new(d: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("contamination probability {p} outside [0, 1]")));
        }
        let search_box = SearchBox::cube(-k::CONTAMINATED_HALF_WIDTH, k::CONTAMINATED_HALF_WIDTH, d)?;
        let f_max = box_maximum(contaminated_f, &search_box).1;
        Ok(ContaminatedSystem { search_box, p, f_max })
    }

    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    pub fn contamination_range(&self) -> (f64, f64) {
        (self.f_max / 10.0, self.f_max)
    }
}

impl System for ContaminatedSystem {
    fn id(&self) -> String {
        if self.p == 0.0 {
            "clean".into()
        } else {
            "contaminated".into()
        }
    }

    fn search_box(&self) -> &SearchBox {
        &self.search_box
    }

    fn evaluate(&self, x: &Input, seed: Seed) -> Observation {
        let clean = contaminated_f(x.coords());
        let mut rng = seed.rng();
        let hit = rng.random::<f64>() < self.p;
        let value = if hit {
            let (lo, hi) = self.contamination_range();
            lo + (hi - lo) * rng.random::<f64>()
        } else {
            clean
        };
        Observation::new(value)
            .with(AuxKey::Contaminated, AuxValue::Int(hit as i64))
            .with(AuxKey::CleanObjective, AuxValue::Real(clean))
    }

    fn clean_objective(&self, x: &Input) -> f64 {
        contaminated_f(x.coords())
    }
}

/// Score surface of the 4-d state system: two Gaussian bumps over a floor.
pub fn state_score(x: &[f64]) -> f64 {
    use k::state::*;
    let bump = |c: &[f64; 4], w: f64| {
        let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum();
        (-r2 / (2.0 * w * w)).exp()
    };
    BASE + GLOBAL_HEIGHT * bump(&GLOBAL_CENTER, GLOBAL_WIDTH) + LOCAL_HEIGHT * bump(&LOCAL_CENTER, LOCAL_WIDTH)
}

pub fn in_fail_region(x: &[f64]) -> bool {
    x.iter().zip(k::state::FAIL_LOWER).all(|(v, lo)| *v >= lo)
}

/// Score to maximize on `[0, 1]^4`. Inside the fail sub-box every query
/// returns the sentinel with state 0; elsewhere the noisy score with state 1.
#[derive(Clone, Debug)]
pub struct StateSystem {
    search_box: SearchBox,
    max_score: f64,
}

impl StateSystem {
    pub fn new() -> Self {
        let search_box = SearchBox::cube(0.0, 1.0, k::state::DIM).expect("unit box");
        let mut s = StateSystem { search_box, max_score: 0.0 };
        s.max_score = box_maximum(|x| s.clean_score(x), &s.search_box).1;
        s
    }

    /// Noise-free score, sentinel included.
    pub fn clean_score(&self, x: &[f64]) -> f64 {
        if in_fail_region(x) {
            k::state::SENTINEL
        } else {
            state_score(x)
        }
    }

    /// Numerical maximum of `clean_score` over the box.
    pub fn max_score(&self) -> f64 {
        self.max_score
    }
}

impl Default for StateSystem {
    fn default() -> Self {
        Self::new()
    }
}

impl System for StateSystem {
    fn id(&self) -> String {
        "state".into()
    }

    fn search_box(&self) -> &SearchBox {
        &self.search_box
    }

    fn evaluate(&self, x: &Input, seed: Seed) -> Observation {
        if in_fail_region(x.coords()) {
            return Observation::new(k::state::SENTINEL).with(AuxKey::State, AuxValue::Int(0));
        }
        let e: f64 = StandardNormal.sample(&mut seed.rng());
        Observation::new(state_score(x.coords()) + k::state::NOISE_SD * e).with(AuxKey::State, AuxValue::Int(1))
    }

    fn clean_objective(&self, x: &Input) -> f64 {
        self.clean_score(x.coords())
    }

    fn objective(&self) -> Objective {
        Objective::Negate
    }
}

/// Shared latent of the multitask system.
pub fn multitask_latent(x: &[f64]) -> f64 {
    use k::multitask::*;
    x.iter().map(|v| (H_FREQ * v).sin() + H_QUAD * v * v).sum()
}

/// Noise-free task-`t` response `alpha_t + beta_t h(x)`.
pub fn multitask_mean(t: usize, x: &[f64]) -> Result<f64> {
    use k::multitask::*;
    if t == 0 || t > ALPHA.len() {
        return Err(Error::UnknownTask { task: t, tasks: ALPHA.len() });
    }
    Ok(ALPHA[t - 1] + BETA[t - 1] * multitask_latent(x))
}

/// One noisy task-`t` observation at `x` (without the task coordinate).
pub fn eval_multitask(t: usize, x: &[f64], seed: Seed) -> Result<Observation> {
    let mean = multitask_mean(t, x)?;
    let e: f64 = StandardNormal.sample(&mut seed.rng());
    Ok(Observation::new(mean + k::multitask::NOISE_SD * e).with(AuxKey::Task, AuxValue::Int(t as i64)))
}

/// Two linearly related tasks. The last input coordinate selects the task
/// (rounded, on `[0.5, 2.5]`).
#[derive(Clone, Debug)]
pub struct MultitaskSystem {
    search_box: SearchBox,
}

impl MultitaskSystem {
    pub fn new() -> Self {
        use k::multitask::*;
        let mut bounds = vec![(LOWER, UPPER); DIM];
        bounds.push((0.5, ALPHA.len() as f64 + 0.5));
        MultitaskSystem { search_box: SearchBox::new(bounds).expect("valid bounds") }
    }

    pub fn tasks(&self) -> usize {
        k::multitask::ALPHA.len()
    }
}

impl Default for MultitaskSystem {
    fn default() -> Self {
        Self::new()
    }
}

impl System for MultitaskSystem {
    fn id(&self) -> String {
        "multitask".into()
    }

    fn search_box(&self) -> &SearchBox {
        &self.search_box
    }

    fn evaluate(&self, x: &Input, seed: Seed) -> Observation {
        let (t, rest) = split_task(x.coords(), self.tasks());
        eval_multitask(t, rest, seed).expect("split_task clamps to a known task")
    }

    fn clean_objective(&self, x: &Input) -> f64 {
        let (t, rest) = split_task(x.coords(), self.tasks());
        multitask_mean(t, rest).expect("split_task clamps to a known task")
    }
}

/// Basin surface from known parameters, with Gaussian noise.
#[derive(Clone, Debug)]
pub struct BasinSystem {
    search_box: SearchBox,
    params: BasinParams,
}

impl BasinSystem {
    pub fn new() -> Self {
        use k::basin::*;
        let params = BasinParams::new(MU.to_vec(), A.to_vec(), B.to_vec(), C, SIGMA2).expect("valid constants");
        BasinSystem { search_box: SearchBox::cube(LOWER, UPPER, MU.len()).expect("valid bounds"), params }
    }

    pub fn params(&self) -> &BasinParams {
        &self.params
    }

    /// Minimum of the noise-free surface, attained at `mu`.
    pub fn known_minimum(&self) -> f64 {
        self.params.c
    }
}

impl Default for BasinSystem {
    fn default() -> Self {
        Self::new()
    }
}

impl System for BasinSystem {
    fn id(&self) -> String {
        "basin".into()
    }

    fn search_box(&self) -> &SearchBox {
        &self.search_box
    }

    fn evaluate(&self, x: &Input, seed: Seed) -> Observation {
        let e: f64 = StandardNormal.sample(&mut seed.rng());
        Observation::new(self.params.mean(x.coords()) + self.params.sigma2.sqrt() * e)
    }

    fn clean_objective(&self, x: &Input) -> f64 {
        self.params.mean(x.coords())
    }
}

/// 1-d sum of two logistic steps with Gaussian noise.
#[derive(Clone, Debug)]
pub struct PhaseStepSystem {
    search_box: SearchBox,
    params: PhaseShiftParams,
}

impl PhaseStepSystem {
    pub fn new() -> Self {
        use k::phase::*;
        let params = PhaseShiftParams { m: M.to_vec(), s: S.to_vec(), mu: MU.to_vec(), b: B.to_vec(), sigma2: SIGMA2 };
        PhaseStepSystem { search_box: SearchBox::cube(LOWER, UPPER, 1).expect("valid bounds"), params }
    }

    pub fn params(&self) -> &PhaseShiftParams {
        &self.params
    }
}

impl Default for PhaseStepSystem {
    fn default() -> Self {
        Self::new()
    }
}

impl System for PhaseStepSystem {
    fn id(&self) -> String {
        "phase_step".into()
    }

    fn search_box(&self) -> &SearchBox {
        &self.search_box
    }

    fn evaluate(&self, x: &Input, seed: Seed) -> Observation {
        let e: f64 = StandardNormal.sample(&mut seed.rng());
        Observation::new(self.params.mean(x[0]) + self.params.sigma2.sqrt() * e)
    }

    fn clean_objective(&self, x: &Input) -> f64 {
        self.params.mean(x[0])
    }
}

fn default_dim() -> usize {
    2
}

/// A system as named in a benchmark config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Contaminated {
        #[serde(default = "default_dim")]
        d: usize,
        p: f64,
    },
    Clean {
        #[serde(default = "default_dim")]
        d: usize,
    },
    State {},
    Multitask {},
    Basin {},
    PhaseStep {},
}

pub const SYSTEM_IDS: &[&str] = &["contaminated", "clean", "state", "multitask", "basin", "phase_step"];

impl SystemSpec {
    pub fn id(&self) -> &'static str {
        match self {
            SystemSpec::Contaminated { .. } => "contaminated",
            SystemSpec::Clean { .. } => "clean",
            SystemSpec::State {} => "state",
            SystemSpec::Multitask {} => "multitask",
            SystemSpec::Basin {} => "basin",
            SystemSpec::PhaseStep {} => "phase_step",
        }
    }

    pub fn build(&self) -> Result<Box<dyn System>> {
        Ok(match *self {
            SystemSpec::Contaminated { d, p } => Box::new(ContaminatedSystem::new(d, p)?),
            SystemSpec::Clean { d } => Box::new(ContaminatedSystem::new(d, 0.0)?),
            SystemSpec::State {} => Box::new(StateSystem::new()),
            SystemSpec::Multitask {} => Box::new(MultitaskSystem::new()),
            SystemSpec::Basin {} => Box::new(BasinSystem::new()),
            SystemSpec::PhaseStep {} => Box::new(PhaseStepSystem::new()),
        })
    }

    /// Number of tasks a model over this system should assume.
    pub fn tasks(&self) -> usize {
        match self {
            SystemSpec::Multitask {} => k::multitask::ALPHA.len(),
            _ => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(v: &[f64]) -> Input {
        Input::new(v.to_vec()).unwrap()
    }

    #[test]
    fn contaminated_minimum_is_minus_one() {
        for d in 1..5 {
            assert_eq!(contaminated_f(&vec![0.0; d]), -1.0);
        }
    }

    #[test]
    fn f_max_sits_at_a_corner_in_2d() {
        let s = ContaminatedSystem::new(2, 0.3).unwrap();
        let corner = contaminated_f(&[5.0, 5.0]);
        assert!((s.f_max() - corner).abs() < 1e-9, "{} vs {corner}", s.f_max());
    }

    #[test]
    fn no_contamination_returns_clean_values() {
        let s = ContaminatedSystem::new(2, 0.0).unwrap();
        let x = input(&[1.0, -2.0]);
        for i in 0..100 {
            let y = s.evaluate(&x, Seed(i));
            assert_eq!(y.objective, contaminated_f(x.coords()));
            assert_eq!(y.aux_int(AuxKey::Contaminated), Some(0));
        }
        assert_eq!(s.id(), "clean");
    }

    #[test]
    fn contaminated_draws_stay_in_range() {
        let s = ContaminatedSystem::new(2, 1.0).unwrap();
        let (lo, hi) = s.contamination_range();
        let x = input(&[0.0, 0.0]);
        for i in 0..1000 {
            let y = s.evaluate(&x, Seed(i));
            assert!(y.objective >= lo && y.objective <= hi);
            assert_eq!(y.aux_real(AuxKey::CleanObjective), Some(-1.0));
        }
    }

    #[test]
    fn state_regions() {
        let s = StateSystem::new();
        let fail = input(&[0.9, 0.8, 0.1, 0.1]);
        let y = s.evaluate(&fail, Seed(3));
        assert_eq!(y.objective, 0.30);
        assert_eq!(y.aux_int(AuxKey::State), Some(0));
        let pass = input(&[0.1, 0.8, 0.1, 0.1]);
        assert_eq!(s.evaluate(&pass, Seed(3)).aux_int(AuxKey::State), Some(1));
        // the global bump's center fails, so the maximum sits on the boundary
        assert!(in_fail_region(&k::state::GLOBAL_CENTER));
        let mut edge = k::state::GLOBAL_CENTER;
        edge[0] = k::state::FAIL_LOWER[0] - 1e-9;
        assert!((s.max_score() - state_score(&edge)).abs() < 1e-4, "{}", s.max_score());
        assert!(s.max_score() < k::state::BASE + k::state::GLOBAL_HEIGHT);
        assert_eq!(s.objective(), Objective::Negate);
    }

    #[test]
    fn state_bump_height_at_center() {
        // the other bump contributes under 1e-8 at this distance
        let v = state_score(&k::state::GLOBAL_CENTER);
        assert!((v - k::state::BASE - k::state::GLOBAL_HEIGHT).abs() < 1e-8);
    }

    #[test]
    fn multitask_tasks_share_the_latent() {
        use k::multitask::*;
        let x = [0.37];
        let y1 = multitask_mean(1, &x).unwrap();
        let y2 = multitask_mean(2, &x).unwrap();
        assert!(((y1 - ALPHA[0]) / BETA[0] - (y2 - ALPHA[1]) / BETA[1]).abs() < 1e-12);
        assert!(matches!(eval_multitask(3, &x, Seed(0)), Err(Error::UnknownTask { task: 3, tasks: 2 })));
        let s = MultitaskSystem::new();
        let y = s.evaluate(&input(&[0.37, 2.2]), Seed(1));
        assert_eq!(y.aux_int(AuxKey::Task), Some(2));
        assert_eq!(s.clean_objective(&input(&[0.37, 0.6])), y1);
    }

    #[test]
    fn basin_minimum_at_mu() {
        let s = BasinSystem::new();
        assert_eq!(s.clean_objective(&input(&k::basin::MU)), s.known_minimum());
    }

    #[test]
    fn specs_build_and_parse() {
        let spec: SystemSpec = serde_json::from_str(r#"{"id":"contaminated","p":0.33}"#).unwrap();
        assert_eq!(spec, SystemSpec::Contaminated { d: 2, p: 0.33 });
        assert!(serde_json::from_str::<SystemSpec>(r#"{"id":"state","p":1}"#).is_err());
        for id in SYSTEM_IDS {
            let json = if *id == "contaminated" { format!(r#"{{"id":"{id}","p":0.1}}"#) } else { format!(r#"{{"id":"{id}"}}"#) };
            let spec: SystemSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(spec.build().unwrap().id(), *id);
        }
        assert!(SystemSpec::Contaminated { d: 2, p: 1.5 }.build().is_err());
    }
}
