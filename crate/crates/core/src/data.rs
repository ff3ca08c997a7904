//! Inputs, observations and datasets.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Input(Vec<f64>);

impl Input {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidInput("input must have at least one coordinate".into()));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite coordinate {c}")));
        }
        Ok(Input(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Input {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Registry of auxiliary observation fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxKey {
    /// Region/state label (switching systems). 1 = pass, 0 = fail.
    State,
    /// Task index, 1-based.
    Task,
    /// Context vector for contextual systems.
    Context,
    /// Contamination flag, for trace auditing only.
    Contaminated,
    /// Uncorrupted objective value, for trace reporting only.
    CleanObjective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AuxValue {
    Int(i64),
    Real(f64),
    Vector(Vec<f64>),
}

/// A system output: an objective value plus optional tagged extras.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation {
    pub objective: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aux: BTreeMap<AuxKey, AuxValue>,
}

impl Observation {
    pub fn new(objective: f64) -> Self {
        Observation { objective, aux: BTreeMap::new() }
    }

    pub fn with(mut self, key: AuxKey, value: AuxValue) -> Self {
        self.aux.insert(key, value);
        self
    }

    pub fn aux_int(&self, key: AuxKey) -> Option<i64> {
        match self.aux.get(&key) {
            Some(AuxValue::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn aux_real(&self, key: AuxKey) -> Option<f64> {
        match self.aux.get(&key) {
            Some(AuxValue::Real(v)) => Some(*v),
            Some(AuxValue::Int(v)) => Some(*v as f64),
            _ => None,
        }
    }
}

/// The objective value `f(y)` of an observation. Aux fields are ignored.
pub fn objective_of(y: &Observation) -> f64 {
    y.objective
}

/// Objective extraction `f(y)` used by acquisitions and `f_min`.
///
/// `Negate` turns a maximization system into the minimization form the
/// loop works in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Identity,
    Negate,
}

impl Objective {
    #[inline]
    pub fn apply(self, y: &Observation) -> f64 {
        self.of_value(objective_of(y))
    }

    #[inline]
    pub fn of_value(self, v: f64) -> f64 {
        match self {
            Objective::Identity => v,
            Objective::Negate => -v,
        }
    }
}

/// Ordered `(input, observation)` pairs in query order.
///
/// Cloning is cheap; appends produce a new dataset and never mutate a value
/// another reader may hold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pairs: Arc<Vec<(Input, Observation)>>,
}

impl Dataset {
    pub fn new() -> Self {
        Dataset::default()
    }

    pub fn from_pairs(pairs: Vec<(Input, Observation)>) -> Result<Self> {
        let mut d = Dataset::new();
        for (x, y) in pairs {
            d = d.append(x, y)?;
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Input dimension, `None` while empty.
    pub fn dim(&self) -> Option<usize> {
        self.pairs.first().map(|(x, _)| x.dim())
    }

    pub fn pairs(&self) -> &[(Input, Observation)] {
        &self.pairs
    }

    pub fn inputs(&self) -> impl Iterator<Item = &Input> {
        self.pairs.iter().map(|(x, _)| x)
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.pairs.iter().map(|(_, y)| y)
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.observations().map(objective_of).collect()
    }

    pub fn last(&self) -> Option<&(Input, Observation)> {
        self.pairs.last()
    }

    /// Returns a new dataset with `(x, y)` appended.
    pub fn append(&self, x: Input, y: Observation) -> Result<Self> {
        if let Some(d) = self.dim() {
            if d != x.dim() {
                return Err(Error::DimensionMismatch { expected: d, got: x.dim() });
            }
        }
        let mut pairs = Vec::with_capacity(self.pairs.len() + 1);
        pairs.extend(self.pairs.iter().cloned());
        pairs.push((x, y));
        Ok(Dataset { pairs: Arc::new(pairs) })
    }

    /// Minimum of `f(y)` over the dataset.
    pub fn f_min(&self, objective: Objective) -> Result<f64> {
        f_min_with(self, objective)
    }
}

/// `dataset_append` in free-function form.
pub fn dataset_append(d: &Dataset, x: Input, y: Observation) -> Result<Dataset> {
    d.append(x, y)
}

/// Minimum objective over `d` (identity extraction).
pub fn f_min(d: &Dataset) -> Result<f64> {
    f_min_with(d, Objective::Identity)
}

pub fn f_min_with(d: &Dataset, objective: Objective) -> Result<f64> {
    d.observations()
        .map(|y| objective.apply(y))
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
        .ok_or(Error::EmptyDataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(v: &[f64]) -> Input {
        Input::new(v.to_vec()).unwrap()
    }

    #[test]
    fn objective_ignores_aux() {
        assert_eq!(objective_of(&Observation::new(-1.0)), -1.0);
        let y = Observation::new(0.3).with(AuxKey::State, AuxValue::Int(1));
        assert_eq!(objective_of(&y), 0.3);
    }

    #[test]
    fn f_min_examples() {
        let d = Dataset::from_pairs(vec![
            (x(&[0.0]), Observation::new(3.0)),
            (x(&[1.0]), Observation::new(-1.0)),
            (x(&[2.0]), Observation::new(2.0)),
        ])
        .unwrap();
        assert_eq!(f_min(&d).unwrap(), -1.0);
        assert_eq!(d.f_min(Objective::Negate).unwrap(), -3.0);

        let single = Dataset::new().append(x(&[0.5]), Observation::new(4.5)).unwrap();
        assert_eq!(f_min(&single).unwrap(), 4.5);

        let lower = d.append(x(&[3.0]), Observation::new(-7.0)).unwrap();
        assert_eq!(f_min(&lower).unwrap(), -7.0);
    }

    #[test]
    fn f_min_of_empty_is_error() {
        assert_eq!(f_min(&Dataset::new()), Err(Error::EmptyDataset));
    }

    #[test]
    fn append_preserves_order_and_value_semantics() {
        let d0 = Dataset::new();
        let d1 = dataset_append(&d0, x(&[1.0, 2.0]), Observation::new(1.0)).unwrap();
        assert_eq!(d0.len(), 0);
        assert_eq!(d1.len(), 1);
        let d2 = d1.append(x(&[3.0, 4.0]), Observation::new(2.0)).unwrap();
        assert_eq!(d1.len(), 1);
        assert_eq!(d2.last().unwrap().0.coords(), &[3.0, 4.0]);
    }

    #[test]
    fn append_dimension_mismatch() {
        let d = Dataset::new().append(x(&[1.0, 2.0]), Observation::new(1.0)).unwrap();
        let err = d.append(x(&[1.0, 2.0, 3.0]), Observation::new(0.0)).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 2, got: 3 });
    }

    #[test]
    fn input_validation() {
        assert!(Input::new(vec![]).is_err());
        assert!(Input::new(vec![f64::NAN]).is_err());
        assert!(Input::new(vec![f64::INFINITY, 0.0]).is_err());
    }
}
