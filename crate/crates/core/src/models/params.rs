use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::autograd::{Grads, Graph, Real, Tensor, Var};
use crate::{Error, Result};

/// Named parameter arrays in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    lookup: HashMap<String, usize>,
}

impl<F: Real> Default for ParameterStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParameterStore<F> {
    pub fn new() -> Self {
        ParameterStore {
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::InvalidInput(format!("duplicate parameter '{}'", name)));
        }
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.lookup.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.lookup.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.tensors)
    }

    pub fn total_parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    /// SHA-256 over names, shapes and values (as little-endian f64).
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{:02x}", b)).collect()
    }

    pub fn cast<G: Real>(&self) -> ParameterStore<G> {
        ParameterStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            lookup: self.lookup.clone(),
        }
    }

    /// Records every array on `graph` as a leaf.
    pub fn bind(&self, graph: &mut Graph<F>, trainable: bool) -> Bound {
        let vars = self.tensors.iter().map(|t| graph.leaf(t.clone(), trainable)).collect();
        Bound {
            vars,
            lookup: self.lookup.clone(),
        }
    }
}

/// Graph handles of a bound [`ParameterStore`], in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    lookup: HashMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.lookup
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::InvalidInput(format!("missing parameter '{}'", name)))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient per parameter in store order; zeros where none flowed.
    pub fn gradients<F: Real>(&self, grads: &Grads<F>, store: &ParameterStore<F>) -> Vec<Vec<F>> {
        self.vars
            .iter()
            .zip(store.tensors())
            .map(|(v, t)| grads.get(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![F::zero(); t.numel()]))
            .collect()
    }
}

pub(crate) struct Init<'a, F, R> {
    pub store: ParameterStore<F>,
    pub rng: &'a mut R,
}

impl<'a, F: Real, R: Rng> Init<'a, F, R> {
    pub fn new(rng: &'a mut R) -> Self {
        Init {
            store: ParameterStore::new(),
            rng,
        }
    }

    /// Zero-mean normal weights with standard deviation `1/sqrt(fan_in)`.
    pub fn normal(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<()> {
        let sd = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(self.rng);
                F::lit(z * sd)
            })
            .collect();
        self.store.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn fill(&mut self, name: String, shape: &[usize], value: f64) -> Result<()> {
        self.store.insert(name, Tensor::filled(shape, F::lit(value)))
    }

    pub fn linear(&mut self, prefix: &str, din: usize, dout: usize) -> Result<()> {
        self.normal(format!("{prefix}.w"), &[din, dout], din)?;
        self.fill(format!("{prefix}.b"), &[dout], 0.0)
    }

    pub fn norm(&mut self, prefix: &str, d: usize) -> Result<()> {
        self.fill(format!("{prefix}.gamma"), &[d], 1.0)?;
        self.fill(format!("{prefix}.beta"), &[d], 0.0)
    }
}
