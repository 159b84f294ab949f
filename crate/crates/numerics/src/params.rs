//! Named parameter storage with per-parameter Adagrad accumulators.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{NumericsError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Trainable tensors keyed by hierarchical names such as `encoder.lstm_fwd.wx`.
///
/// Invariants: the accumulator name set equals the entry name set, shapes
/// match, and accumulator entries are never negative.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<S> {
    entries: BTreeMap<String, Tensor<S>>,
    accumulators: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
            accumulators: BTreeMap::new(),
        }
    }

    /// Adds or replaces a parameter, resetting its accumulator to zero.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>) {
        let name = name.into();
        self.accumulators
            .insert(name.clone(), Tensor::zeros(value.shape()));
        self.entries.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<S>> {
        self.get(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn accumulator(&self, name: &str) -> Option<&Tensor<S>> {
        self.accumulators.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn accumulators(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.accumulators.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Adds a parameter drawn uniformly from `[-range, range]`.
    ///
    /// Values are drawn as `f64` and then rounded, so f32 and f64 stores
    /// built from the same seed agree up to rounding.
    pub fn insert_uniform(&mut self, name: impl Into<String>, shape: &[usize], range: f64, rng: &mut impl Rng) {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| S::lit(rng.gen_range(-range..=range)))
            .collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("non-empty shape"));
    }

    /// Sets every accumulator entry to `value`, which must be non-negative.
    pub fn fill_accumulators(&mut self, value: S) -> Result<()> {
        if !(value >= S::zero()) {
            return Err(NumericsError::InvalidHyper(format!("accumulator value must be non-negative, got {value}")));
        }
        for acc in self.accumulators.values_mut() {
            acc.data_mut().fill(value);
        }
        Ok(())
    }

    pub(crate) fn set_accumulator(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        match self.entries.get(name) {
            Some(e) if e.shape() == value.shape() => {
                self.accumulators.insert(name.to_string(), value);
                Ok(())
            }
            Some(e) => Err(NumericsError::Shape {
                op: "set_accumulator",
                detail: format!("{name}: {:?} vs {:?}", e.shape(), value.shape()),
            }),
            None => Err(NumericsError::UnknownParam(name.to_string())),
        }
    }

    pub(crate) fn entry_and_accumulator_mut(&mut self, name: &str) -> Option<(&mut Tensor<S>, &mut Tensor<S>)> {
        let e = self.entries.get_mut(name)?;
        let a = self.accumulators.get_mut(name)?;
        Some((e, a))
    }

    /// Converts every entry and accumulator to another precision.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let conv = |m: &BTreeMap<String, Tensor<S>>| {
            m.iter()
                .map(|(k, v)| {
                    let data = v.data().iter().map(|x| T::lit(x.as_f64())).collect();
                    (k.clone(), Tensor::new(v.shape().to_vec(), data).expect("same shape"))
                })
                .collect()
        };
        ParamStore {
            entries: conv(&self.entries),
            accumulators: conv(&self.accumulators),
        }
    }
}
