//! Named parameter storage shared by every learnable module.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Matrix;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    /// Frozen parameters receive no optimizer updates and are skipped by
    /// gradient checking.
    pub frozen: bool,
}

/// Ordered collection of uniquely named parameters.
///
/// Insertion order is the serialization order of checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    /// Number of optimizer steps applied so far.
    pub step: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Registers a parameter. Panics on a duplicate name.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            frozen: false,
        });
        ParamId(id)
    }

    pub fn insert_normal(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let normal = Normal::new(0.0, std).expect("valid std");
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        self.insert(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Zero gradient slots, one per parameter with matching shape.
    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            grads: self
                .params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        }
    }
}

/// One gradient matrix per parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    /// Adds `other` into `self`. Summation order is fixed by the caller.
    pub fn accumulate(&mut self, other: &Gradients) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.scale_in_place(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Matrix::is_finite)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut store = ParamStore::new(0);
        let a = store.insert("a", Matrix::zeros(2, 3));
        let b = store.insert("b", Matrix::zeros(1, 1));
        assert_eq!(store.id("a"), Some(a));
        assert_eq!(store.id("b"), Some(b));
        assert_eq!(store.num_scalars(), 7);
        let grads = store.zero_grads();
        assert_eq!(grads.get(a).shape(), (2, 3));
        let names: Vec<_> = store.iter().map(|(_, p)| p.name.as_str()).collect();
        assert_eq!(names, ["a", "b"]);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_name_panics() {
        let mut store = ParamStore::new(0);
        store.insert("w", Matrix::zeros(1, 1));
        store.insert("w", Matrix::zeros(1, 1));
    }
}
