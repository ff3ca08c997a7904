//! The three-operation model contract: `infer`, `post`, `gen`.
//!
//! A [`Model`] turns a dataset into an opaque [`PosteriorHandle`] once per
//! BO iteration (`infer`). Acquisitions then only ever call `post(handle,
//! seed)` to get a latent sample and `gen(x, z, seed)` to simulate an
//! observation. Both must be pure functions of their arguments.

use std::any::Any;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, Input, Observation};
use crate::error::{Error, Result};
use crate::seed::Seed;

/// One posterior draw of a model's latent variables.
///
/// Fields are named real vectors (scalars are length-1). A sample may also
/// carry a derived attachment, such as a factorization conditioned on the
/// training data, that its model's `gen` reuses. Clones share storage, which
/// gives each pool entry a stable identity for memoizing per-sample work.
#[derive(Clone)]
pub struct LatentSample(Arc<LatentInner>);

struct LatentInner {
    fields: BTreeMap<String, Vec<f64>>,
    attachment: Option<Arc<dyn Any + Send + Sync>>,
}

impl PartialEq for LatentSample {
    fn eq(&self, other: &Self) -> bool {
        self.0.fields == other.0.fields
    }
}

impl fmt::Debug for LatentSample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatentSample")
            .field("fields", &self.0.fields)
            .field("attached", &self.0.attachment.is_some())
            .finish()
    }
}

impl LatentSample {
    fn from_fields(fields: BTreeMap<String, Vec<f64>>) -> Self {
        LatentSample(Arc::new(LatentInner { fields, attachment: None }))
    }

    /// Derived state attached by the model that built this sample.
    pub fn attachment<T: Any>(&self) -> Option<&T> {
        self.0.attachment.as_deref().and_then(|a| a.downcast_ref::<T>())
    }

    /// Same fields with `attachment` attached.
    pub fn with_attachment<T: Any + Send + Sync>(&self, attachment: T) -> LatentSample {
        LatentSample(Arc::new(LatentInner {
            fields: self.0.fields.clone(),
            attachment: Some(Arc::new(attachment)),
        }))
    }

    pub fn fields(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.0.fields
    }

    pub fn builder() -> LatentBuilder {
        LatentBuilder::default()
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.0
            .fields
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingLatent(name.to_string()))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.get(name)?
            .first()
            .copied()
            .ok_or_else(|| Error::MissingLatent(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.fields.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.fields.keys().map(String::as_str)
    }

    /// Identity of the shared storage; equal for clones of one pool entry.
    pub fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Fields under `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> LatentSample {
        let fields = self
            .0
            .fields
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        LatentSample::from_fields(fields)
    }

    fn merge_prefixed(parts: &[(&str, &LatentSample)]) -> LatentSample {
        let mut fields = BTreeMap::new();
        for (prefix, z) in parts {
            for (k, v) in z.0.fields.iter() {
                fields.insert(format!("{prefix}{k}"), v.clone());
            }
        }
        LatentSample::from_fields(fields)
    }
}

/// The constituent samples behind a draw from a `Product` handle.
#[derive(Clone, Debug)]
pub struct LatentPair(pub LatentSample, pub LatentSample);

#[derive(Default)]
pub struct LatentBuilder(BTreeMap<String, Vec<f64>>);

impl LatentBuilder {
    pub fn scalar(mut self, name: &str, v: f64) -> Self {
        self.0.insert(name.to_string(), vec![v]);
        self
    }

    pub fn vector(mut self, name: &str, v: Vec<f64>) -> Self {
        self.0.insert(name.to_string(), v);
        self
    }

    pub fn build(self) -> LatentSample {
        LatentSample::from_fields(self.0)
    }
}

/// Independent Gaussian posterior over named latent vectors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParametricPosterior {
    /// Per field, `(mean, std)` for each component.
    pub gaussians: BTreeMap<String, Vec<(f64, f64)>>,
    /// Fields copied verbatim into every draw.
    pub fixed: BTreeMap<String, Vec<f64>>,
}

impl ParametricPosterior {
    pub fn draw(&self, seed: Seed) -> LatentSample {
        let mut rng = seed.rng();
        let mut fields = self.fixed.clone();
        for (name, params) in &self.gaussians {
            let v = params
                .iter()
                .map(|&(mean, std)| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    mean + std * e
                })
                .collect();
            fields.insert(name.clone(), v);
        }
        LatentSample::from_fields(fields)
    }
}

const POST_STREAM: u64 = 0x706f_7374;

/// Opaque posterior representation returned by `infer`.
#[derive(Clone, Debug)]
pub enum PosteriorHandle {
    /// Finite set of latent samples, drawn uniformly by `post`.
    SamplePool(Arc<Vec<LatentSample>>),
    /// Named distribution parameters, sampled directly by `post`.
    Parametric(Arc<ParametricPosterior>),
    /// Independent posteriors of two constituent models.
    Product(Arc<PosteriorHandle>, Arc<PosteriorHandle>),
}

impl PosteriorHandle {
    pub fn pool(samples: Vec<LatentSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Inference("sample pool is empty".into()));
        }
        Ok(PosteriorHandle::SamplePool(Arc::new(samples)))
    }

    /// Generic `post`: a pure function of `(self, seed)`.
    ///
    /// Draws come from a sub-stream of `seed`, so a `gen` call that reuses
    /// the same seed gets noise independent of which sample was picked.
    pub fn draw(&self, seed: Seed) -> LatentSample {
        let seed = seed.derive(&[POST_STREAM]);
        match self {
            PosteriorHandle::SamplePool(pool) => pool[seed.index(pool.len())].clone(),
            PosteriorHandle::Parametric(p) => p.draw(seed),
            PosteriorHandle::Product(a, b) => {
                let za = a.draw(seed.derive(&[1]));
                let zb = b.draw(seed.derive(&[2]));
                LatentSample::merge_prefixed(&[("1/", &za), ("2/", &zb)])
                    .with_attachment(LatentPair(za, zb))
            }
        }
    }

    pub fn samples(&self) -> Option<&[LatentSample]> {
        match self {
            PosteriorHandle::SamplePool(pool) => Some(pool),
            _ => None,
        }
    }

    pub fn components(&self) -> Option<(&PosteriorHandle, &PosteriorHandle)> {
        match self {
            PosteriorHandle::Product(a, b) => Some((a, b)),
            _ => None,
        }
    }
}

/// Simulated observations plus the number of model calls spent on them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Draws {
    pub observations: Vec<Observation>,
    pub post_calls: usize,
    pub gen_calls: usize,
}

/// A probabilistic model usable by the BO engine.
///
/// `post` and `gen` must be deterministic in their arguments (seed
/// included) and callable concurrently on one handle.
pub trait Model: Send + Sync {
    /// Registry id, e.g. `"gp"` or `"bpoe:phaseshift+gp"`.
    fn id(&self) -> String;

    /// Runs inference on `data`. `seed` drives any randomized back-end.
    fn infer(&self, data: &Dataset, seed: Seed) -> Result<PosteriorHandle>;

    /// `infer` plus the post-burn-in acceptance rate of each MH chain it ran.
    fn infer_with_rates(&self, data: &Dataset, seed: Seed) -> Result<(PosteriorHandle, Vec<f64>)> {
        Ok((self.infer(data, seed)?, Vec::new()))
    }

    fn post(&self, handle: &PosteriorHandle, seed: Seed) -> LatentSample {
        handle.draw(seed)
    }

    fn gen(&self, x: &Input, z: &LatentSample, seed: Seed) -> Result<Observation>;

    /// `M` posterior-predictive draws at `x`: draw `m` (1-based) uses
    /// `seed_m = derive(seed_base, [m])` for both `post` and `gen`.
    ///
    /// Overrides may memoize but must return exactly what this loop returns.
    fn predictive_batch(
        &self,
        x: &Input,
        handle: &PosteriorHandle,
        m: usize,
        seed_base: Seed,
    ) -> Result<Draws> {
        let mut observations = Vec::with_capacity(m);
        for i in 1..=m {
            let s = seed_base.derive(&[i as u64]);
            let z = self.post(handle, s);
            observations.push(self.gen(x, &z, s)?);
        }
        Ok(Draws { observations, post_calls: m, gen_calls: m })
    }

    /// `M` draws from `p(y | z; x)` for one fixed latent sample.
    fn conditional_batch(
        &self,
        x: &Input,
        z: &LatentSample,
        m: usize,
        seed_base: Seed,
    ) -> Result<Draws> {
        let observations = (1..=m)
            .map(|i| self.gen(x, z, seed_base.derive(&[i as u64])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Draws { observations, post_calls: 0, gen_calls: m })
    }
}

impl<T: Model + ?Sized> Model for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn infer(&self, data: &Dataset, seed: Seed) -> Result<PosteriorHandle> {
        (**self).infer(data, seed)
    }
    fn infer_with_rates(&self, data: &Dataset, seed: Seed) -> Result<(PosteriorHandle, Vec<f64>)> {
        (**self).infer_with_rates(data, seed)
    }
    fn post(&self, handle: &PosteriorHandle, seed: Seed) -> LatentSample {
        (**self).post(handle, seed)
    }
    fn gen(&self, x: &Input, z: &LatentSample, seed: Seed) -> Result<Observation> {
        (**self).gen(x, z, seed)
    }
    fn predictive_batch(
        &self,
        x: &Input,
        handle: &PosteriorHandle,
        m: usize,
        seed_base: Seed,
    ) -> Result<Draws> {
        (**self).predictive_batch(x, handle, m, seed_base)
    }
    fn conditional_batch(
        &self,
        x: &Input,
        z: &LatentSample,
        m: usize,
        seed_base: Seed,
    ) -> Result<Draws> {
        (**self).conditional_batch(x, z, m, seed_base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_draw_is_pure_and_shares_storage() {
        let pool: Vec<_> =
            (0..10).map(|i| LatentSample::builder().scalar("a", i as f64).build()).collect();
        let h = PosteriorHandle::pool(pool).unwrap();
        let s = Seed(5);
        let a = h.draw(s);
        let b = h.draw(s);
        assert_eq!(a, b);
        assert_eq!(a.key(), b.key());
    }

    #[test]
    fn empty_pool_rejected() {
        assert!(PosteriorHandle::pool(vec![]).is_err());
    }

    #[test]
    fn parametric_draw_is_pure() {
        let mut p = ParametricPosterior::default();
        p.gaussians.insert("mu".into(), vec![(1.0, 2.0), (0.0, 1.0)]);
        p.fixed.insert("k".into(), vec![3.0]);
        let h = PosteriorHandle::Parametric(Arc::new(p));
        let a = h.draw(Seed(1));
        assert_eq!(a, h.draw(Seed(1)));
        assert_eq!(a.get("mu").unwrap().len(), 2);
        assert_eq!(a.scalar("k").unwrap(), 3.0);
        assert_ne!(a, h.draw(Seed(2)));
    }

    #[test]
    fn product_draw_prefixes_components() {
        let h1 = PosteriorHandle::pool(vec![LatentSample::builder().scalar("a", 1.0).build()])
            .unwrap();
        let h2 = PosteriorHandle::pool(vec![LatentSample::builder().scalar("a", 2.0).build()])
            .unwrap();
        let h = PosteriorHandle::Product(Arc::new(h1), Arc::new(h2));
        let z = h.draw(Seed(3));
        assert_eq!(z.scalar("1/a").unwrap(), 1.0);
        assert_eq!(z.strip_prefix("2/").scalar("a").unwrap(), 2.0);
        let pair = z.attachment::<LatentPair>().unwrap();
        assert_eq!(pair.1.scalar("a").unwrap(), 2.0);
    }

    #[test]
    fn missing_field_is_error() {
        let z = LatentSample::builder().build();
        assert_eq!(z.scalar("nope"), Err(Error::MissingLatent("nope".into())));
    }
}
