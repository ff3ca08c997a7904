//! Concrete models and the shared MH engine.

use std::collections::HashMap;

use crate::data::{Input, Observation};
use crate::error::{Error, Result};
use crate::model::{Draws, LatentSample, Model, PosteriorHandle};
use crate::search::SearchBox;
use crate::seed::Seed;

pub mod basin;
pub mod denoising;
pub mod gp;
pub mod mh;
pub mod phaseshift;
pub mod switching;
pub mod toy;
pub mod warp;

pub use basin::{basin_r, BasinModel, BasinParams};
pub use denoising::DenoisingGpModel;
pub use gp::{GpFit, GpHyper, GpModel};
pub use mh::{mh_infer, MhConfig, MhOutput};
pub use phaseshift::{logistic, PhaseShiftModel, PhaseShiftParams};
pub use switching::SwitchingModel;
pub use toy::GaussianToy;
pub use warp::{TaskWarp, WarpModel, WarpParams};

use crate::ensemble::{BpoeModel, CombineRule};

/// Prior constants shared by the zoo. All are weakly informative and scaled
/// by the data where a scale is needed.
pub mod priors {
    /// SD of every GP log-hyperparameter around its data-scaled center.
    pub const GP_LOG_HYPER_SD: f64 = 1.0;
    /// Lengthscale center as a fraction of the box width.
    pub const GP_LENGTHSCALE_FRACTION: f64 = 0.25;
    /// Noise variance center as a fraction of the data variance.
    pub const GP_NOISE_FRACTION: f64 = 0.01;

    pub const BASIN_LOG_AB_SD: f64 = 1.0;
    pub const BASIN_LOG_SIGMA2_MEAN: f64 = -2.0;
    pub const BASIN_LOG_SIGMA2_SD: f64 = 1.0;

    pub const SWITCH_WEIGHT_SD: f64 = 2.0;
    /// Component-2 log variance center, relative to `ln(var_y)`.
    pub const SWITCH_LOG_VAR_OFFSET: f64 = -2.0;
    pub const SWITCH_LOG_VAR_SD: f64 = 2.0;

    pub const DENOISE_WC_ALPHA: f64 = 1.0;
    pub const DENOISE_WC_BETA: f64 = 4.0;

    pub const PHASE_MB_SD: f64 = 2.0;
    pub const PHASE_LOG_S_MEAN: f64 = 1.0;
    pub const PHASE_LOG_S_SD: f64 = 0.5;
    pub const PHASE_LOG_SIGMA2_MEAN: f64 = -2.0;
    pub const PHASE_LOG_SIGMA2_SD: f64 = 1.0;

    pub const WARP_W0_SD: f64 = 2.0;
    pub const WARP_W1_SD: f64 = 1.0;
    pub const WARP_W2_MEAN: f64 = 1.0;
    pub const WARP_W2_SD: f64 = 0.5;
    pub const WARP_LOG_SIGMA2_MEAN: f64 = -2.0;
    pub const WARP_LOG_SIGMA2_SD: f64 = 1.0;
}

/// Settings every model constructor receives.
#[derive(Clone, Debug)]
pub struct ModelContext {
    pub search_box: SearchBox,
    pub mh: MhConfig,
    pub combine_rule: CombineRule,
    /// Number of tasks for the warp model.
    pub tasks: usize,
    /// Phase-shift components.
    pub phase_components: usize,
}

impl ModelContext {
    pub fn new(search_box: SearchBox) -> Self {
        ModelContext {
            search_box,
            mh: MhConfig::default(),
            combine_rule: CombineRule::Standard,
            tasks: 2,
            phase_components: 2,
        }
    }

    pub fn with_mh(mut self, mh: MhConfig) -> Self {
        self.mh = mh;
        self
    }

    pub fn with_combine_rule(mut self, rule: CombineRule) -> Self {
        self.combine_rule = rule;
        self
    }

    pub fn with_tasks(mut self, tasks: usize) -> Self {
        self.tasks = tasks;
        self
    }
}

pub const MODEL_IDS: &[&str] = &["gp", "switching", "denoising_gp", "basin", "warp", "phaseshift"];

/// Builds a model from its registry id, including `bpoe:<a>+<b>`.
pub fn build_model(id: &str, ctx: &ModelContext) -> Result<Box<dyn Model>> {
    if let Some(rest) = id.strip_prefix("bpoe:") {
        let (a, b) = rest
            .split_once('+')
            .ok_or_else(|| Error::UnknownModel(id.to_string()))?;
        if a.starts_with("bpoe:") || b.starts_with("bpoe:") {
            return Err(Error::UnknownModel(id.to_string()));
        }
        let m1 = build_model(a, ctx)?;
        let m2 = build_model(b, ctx)?;
        return Ok(Box::new(BpoeModel::new(m1, m2, ctx.combine_rule)));
    }
    let c = ctx.clone();
    Ok(match id {
        "gp" => Box::new(GpModel::new(c)),
        "switching" => Box::new(SwitchingModel::new(c)),
        "denoising_gp" => Box::new(DenoisingGpModel::new(c)),
        "basin" => Box::new(BasinModel::new(c)),
        "warp" => Box::new(WarpModel::new(c)?),
        "phaseshift" => Box::new(PhaseShiftModel::new(c)?),
        _ => return Err(Error::UnknownModel(id.to_string())),
    })
}

/// A model whose `gen` splits into per-`(x, z)` preparation and a cheap
/// seeded draw. Batches memoize the preparation per pool entry.
pub(crate) trait CachedGen: Model {
    type Cache;

    fn prepare(&self, x: &Input, z: &LatentSample) -> Result<Self::Cache>;

    fn draw(&self, cache: &Self::Cache, seed: Seed) -> Observation;
}

pub(crate) fn cached_predictive_batch<T: CachedGen>(
    model: &T,
    x: &Input,
    handle: &PosteriorHandle,
    m: usize,
    seed_base: Seed,
) -> Result<Draws> {
    let mut observations = Vec::with_capacity(m);
    if handle.samples().is_none() {
        for i in 1..=m {
            let s = seed_base.derive(&[i as u64]);
            let z = model.post(handle, s);
            observations.push(model.draw(&model.prepare(x, &z)?, s));
        }
        return Ok(Draws { observations, post_calls: m, gen_calls: m });
    }
    // Pool entries outlive the map, so their addresses are stable keys.
    let mut memo: HashMap<usize, T::Cache> = HashMap::new();
    for i in 1..=m {
        let s = seed_base.derive(&[i as u64]);
        let z = model.post(handle, s);
        let cache = match memo.entry(z.key()) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => e.insert(model.prepare(x, &z)?),
        };
        observations.push(model.draw(cache, s));
    }
    Ok(Draws { observations, post_calls: m, gen_calls: m })
}

pub(crate) fn cached_conditional_batch<T: CachedGen>(
    model: &T,
    x: &Input,
    z: &LatentSample,
    m: usize,
    seed_base: Seed,
) -> Result<Draws> {
    let cache = model.prepare(x, z)?;
    let observations = (1..=m).map(|i| model.draw(&cache, seed_base.derive(&[i as u64]))).collect();
    Ok(Draws { observations, post_calls: 0, gen_calls: m })
}

/// Implements `gen`, `predictive_batch` and `conditional_batch` through
/// [`CachedGen`].
macro_rules! cached_model_ops {
    () => {
        fn gen(
            &self,
            x: &$crate::data::Input,
            z: &$crate::model::LatentSample,
            seed: $crate::seed::Seed,
        ) -> $crate::error::Result<$crate::data::Observation> {
            let cache = $crate::zoo::CachedGen::prepare(self, x, z)?;
            Ok($crate::zoo::CachedGen::draw(self, &cache, seed))
        }

        fn predictive_batch(
            &self,
            x: &$crate::data::Input,
            handle: &$crate::model::PosteriorHandle,
            m: usize,
            seed_base: $crate::seed::Seed,
        ) -> $crate::error::Result<$crate::model::Draws> {
            $crate::zoo::cached_predictive_batch(self, x, handle, m, seed_base)
        }

        fn conditional_batch(
            &self,
            x: &$crate::data::Input,
            z: &$crate::model::LatentSample,
            m: usize,
            seed_base: $crate::seed::Seed,
        ) -> $crate::error::Result<$crate::model::Draws> {
            $crate::zoo::cached_conditional_batch(self, x, z, m, seed_base)
        }
    };
}
pub(crate) use cached_model_ops;

/// Data mean and variance with fallbacks for tiny or constant data.
pub(crate) fn data_scale(y: &[f64]) -> (f64, f64) {
    let (mean, var) = crate::stats::mean_var(y);
    let var = if y.len() >= 2 && var > 1e-12 { var } else { 1.0 };
    (mean, var)
}
