//! Counter-style seed derivation.
//!
//! Every random draw in the engine is keyed by a [`Seed`]. Seeds for
//! sub-streams are derived from a parent seed and a list of integer labels,
//! so a whole run is a pure function of its master seed and no global RNG
//! state exists.

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// A 64-bit seed. Derived seeds are pure functions of `(master, labels)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `master` with `labels` into a new seed.
///
/// The label count is folded in, so `[]`, `[0]` and `[0, 0]` give distinct
/// seeds.
pub fn derive_seed(master: Seed, labels: &[u64]) -> Seed {
    let mut h = splitmix64(master.0 ^ 0x5851_F42D_4C95_7F2D);
    for &label in labels {
        h = splitmix64(h ^ splitmix64(label.wrapping_add(GOLDEN)));
    }
    Seed(splitmix64(h ^ labels.len() as u64))
}

impl Seed {
    pub fn derive(self, labels: &[u64]) -> Seed {
        derive_seed(self, labels)
    }

    /// A fresh generator for this seed's stream.
    pub fn rng(self) -> SmallRng {
        SmallRng::seed_from_u64(self.0)
    }

    /// First standard-normal variate of this seed's stream.
    pub fn std_normal(self) -> f64 {
        StandardNormal.sample(&mut self.rng())
    }

    /// First uniform variate in `[0, 1)` of this seed's stream.
    pub fn uniform(self) -> f64 {
        self.rng().random::<f64>()
    }

    /// Uniform index in `0..n`; `n` must be positive.
    pub fn index(self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.rng().random_range(0..n)
    }
}

impl From<u64> for Seed {
    fn from(value: u64) -> Self {
        Seed(value)
    }
}

impl std::fmt::Display for Seed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
