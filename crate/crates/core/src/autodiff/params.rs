use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::graph::{Graph, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Ordered set of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Adds `other` into `self` tensor by tensor.
    pub fn add_assign(&mut self, other: &ParamStore<T>) -> Result<()> {
        for (name, t) in self.tensors.iter_mut() {
            let o = other.get(name)?;
            t.same_shape(o, name)?;
            for (a, &b) in t.data_mut().iter_mut().zip(o.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, c: T) {
        for t in self.tensors.values_mut() {
            for v in t.data_mut() {
                *v *= c;
            }
        }
    }

    /// Registers every tensor as a gradient-carrying leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), graph.param(v.clone())))
                .collect(),
        }
    }

    /// Collects gradients for every bound parameter after `graph.backward`.
    pub fn grads_from(&self, graph: &Graph<T>, bound: &Bound) -> Result<ParamStore<T>> {
        let mut out = ParamStore::new();
        for name in self.tensors.keys() {
            out.insert(name.clone(), graph.grad(bound.get(name)?));
        }
        Ok(out)
    }
}

/// Graph handles of a bound [`ParamStore`].
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    /// Binds names to variables created elsewhere on the graph.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter `{name}` not bound")))
    }
}

/// Uniform Glorot initialisation for a `fan_in x fan_out` weight.
pub fn glorot<T: Scalar, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    Tensor::from_fn(&[fan_in, fan_out], |_| T::lit(dist.sample(rng)))
}
