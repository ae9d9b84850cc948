use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{Real, Tensor};

/// Named parameter tensors. Ordered by name so iteration, checkpoints and
/// gradient accumulation are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
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

    pub fn n_values(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Every parameter whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamStore<T>) {
        self.tensors.extend(other.tensors);
    }

    pub fn map_values(&mut self, mut f: impl FnMut(&mut T)) {
        for t in self.tensors.values_mut() {
            t.data_mut().iter_mut().for_each(&mut f);
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub(crate) fn from_map(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        Self { tensors }
    }
}

/// Seeded initialiser used while building a network's parameters.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    /// Uniform in `+-1/sqrt(fan_in)`.
    pub fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) {
        let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.store.insert(name, Tensor::new(shape.to_vec(), data).expect("init shape"));
    }

    pub fn fill(&mut self, name: String, shape: &[usize], v: f32) {
        self.store.insert(name, Tensor::filled(shape, v));
    }

    pub fn linear(&mut self, prefix: &str, n_in: usize, n_out: usize) {
        self.uniform(format!("{prefix}.w"), &[n_out, n_in], n_in);
        self.fill(format!("{prefix}.b"), &[n_out], 0.0);
    }

    pub fn conv1d(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        self.uniform(format!("{prefix}.w"), &[cout, cin, k], cin * k);
        self.fill(format!("{prefix}.b"), &[cout], 0.0);
    }

    pub fn conv2d(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        self.uniform(format!("{prefix}.w"), &[cout, cin, k, k], cin * k * k);
        self.fill(format!("{prefix}.b"), &[cout], 0.0);
    }

    /// Output layers start at zero so an untrained net adds nothing.
    pub fn zero_conv1d(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        self.fill(format!("{prefix}.w"), &[cout, cin, k], 0.0);
        self.fill(format!("{prefix}.b"), &[cout], 0.0);
    }

    pub fn zero_conv2d(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) {
        self.fill(format!("{prefix}.w"), &[cout, cin, k, k], 0.0);
        self.fill(format!("{prefix}.b"), &[cout], 0.0);
    }
}
