use std::collections::BTreeMap;

use crate::{Graph, Real, Tensor, Var};

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    /// Record every tensor on `graph` as a leaf.
    pub fn bind<'g>(&self, graph: &'g Graph<T>) -> Bound<'g, T> {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), graph.leaf(v.clone())))
                .collect(),
        }
    }
}

/// A [`ParamSet`] recorded on a graph.
#[derive(Debug, Clone)]
pub struct Bound<'g, T: Real> {
    vars: BTreeMap<String, Var<'g, T>>,
}

impl<'g, T: Real> Bound<'g, T> {
    /// Panics on a missing name; parameter names are fixed by construction.
    pub fn get(&self, name: &str) -> Var<'g, T> {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name:?}"))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &Var<'g, T>)> {
        self.vars.iter()
    }

    /// Gradients of `loss` for every parameter, keyed by name.
    pub fn grads(&self, loss: Var<'g, T>) -> BTreeMap<String, Tensor<T>> {
        let names: Vec<&String> = self.vars.keys().collect();
        let vars: Vec<Var<'g, T>> = self.vars.values().copied().collect();
        let grads = loss.graph().grad(loss, &vars);
        names
            .into_iter()
            .zip(grads)
            .map(|(n, g)| (n.clone(), (*g.value()).clone()))
            .collect()
    }
}
