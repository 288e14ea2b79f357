use std::collections::HashMap;

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable arrays.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lookup: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(self.tensors.len() - 1))
    }

    /// Uniform in `[-bound, bound]` with `bound = gain / sqrt(fan_in)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let bound = gain / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound));
        self.add(name, t)
    }

    pub fn add_filled(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<ParamId> {
        self.add(name, Tensor::filled(shape, value))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces a tensor of identical shape, e.g. when loading a checkpoint.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if self.tensors[id.0].shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: stored shape {:?} vs model shape {:?}",
                value.shape(),
                self.tensors[id.0].shape()
            )));
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    /// Copies every parameter into `g`. Parameters for which `trainable`
    /// returns false become constants.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Binding {
        let vars = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| g.leaf(t.clone(), trainable(n)))
            .collect();
        Binding { vars }
    }

    /// Gradients of the bound parameters after `g.backward`; `None` for
    /// frozen or unreached parameters.
    pub fn grads(&self, g: &Graph, binding: &Binding) -> Vec<Option<Tensor>> {
        binding.vars.iter().map(|&v| g.grad(v).cloned()).collect()
    }
}

/// Graph handles for the parameters of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Adds `src` into `dst`, treating `None` as zero.
pub fn accumulate_grads(dst: &mut Vec<Option<Tensor>>, src: Vec<Option<Tensor>>) {
    if dst.is_empty() {
        *dst = src;
        return;
    }
    for (d, s) in dst.iter_mut().zip(src) {
        match (d.as_mut(), s) {
            (Some(d), Some(s)) => d.add_assign(&s),
            (None, Some(s)) => *d = Some(s),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut p = ParamStore::new();
        p.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(p.add("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamStore::new();
        let a = p.add_uniform("enc.w", &[4], 4, 1.0, &mut rng).unwrap();
        let b = p.add_uniform("head.w", &[4], 4, 1.0, &mut rng).unwrap();
        let mut g = Graph::new();
        let bind = p.bind(&mut g, |n| !n.starts_with("enc."));
        let s = g.mul(bind.var(a), bind.var(b)).unwrap();
        let l = g.sum(s);
        g.backward(l).unwrap();
        let grads = p.grads(&g, &bind);
        assert!(grads[0].is_none());
        assert_eq!(grads[1].as_ref().unwrap(), p.get(a));
    }
}
