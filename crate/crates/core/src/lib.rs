//! Bayesian optimization over arbitrary probabilistic models.
//!
//! A model only needs to provide `infer`, `post` and `gen` (see [`Model`]).
//! Acquisitions are Monte Carlo estimates built from posterior predictive
//! draws, optionally evaluated at adaptive fidelity, and the outer loop in
//! [`probo`] calls `infer` once per query.

pub mod acquisition;
pub mod bench;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod multifidelity;
pub mod probo;
pub mod search;
pub mod seed;
pub mod stats;
pub mod zoo;

pub use acquisition::{AcqEvalRecord, AcqSpec, AcquisitionKind, LcbEstimator, Predictive, Spread};
pub use data::{AuxKey, AuxValue, Dataset, Input, Objective, Observation};
pub use error::{Error, Result};
pub use model::{Draws, LatentSample, Model, ParametricPosterior, PosteriorHandle};
pub use multifidelity::{AcqMinState, FidelitySchedule};
pub use probo::{probo_run, FidelityMode, RunConfig, RunTrace, System};
pub use search::{OptimizerConfig, SearchBox};
pub use seed::{derive_seed, Seed};
