use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Named learnable tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

/// Tape handles for every parameter of a [`ParamStore`] in one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.params.insert(name.into(), tensor.with_requires_grad(true));
    }

    /// Uniform in `±sqrt(1/fan_in)`.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape"));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Registers every parameter on `tape` as a gradient-requiring leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bindings> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.params {
            vars.insert(name.clone(), tape.param(t.shape(), t.data().to_vec())?);
        }
        Ok(Bindings { vars })
    }

    /// Registers every parameter as a constant; nothing is recorded for backward.
    pub fn bind_constants(&self, tape: &mut Tape) -> Result<Bindings> {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.params {
            vars.insert(name.clone(), tape.constant(t.shape(), t.data().to_vec())?);
        }
        Ok(Bindings { vars })
    }

    /// Gradients of every bound parameter in name order; unreachable ones are zero.
    pub fn collect_grads(&self, bindings: &Bindings, grads: &mut Gradients) -> Result<Vec<Vec<f64>>> {
        self.params
            .iter()
            .map(|(name, t)| Ok(grads.take(bindings.get(name)?).unwrap_or_else(|| vec![0.0; t.numel()])))
            .collect()
    }

    /// Adds `weight * grads[k]` into the k-th parameter's gradient, in name order.
    pub fn add_grads(&mut self, grads: &[Vec<f64>], weight: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::Autodiff(format!(
                "expected {} gradient buffers, got {}",
                self.params.len(),
                grads.len()
            )));
        }
        for (t, g) in self.params.values_mut().zip(grads) {
            let mut acc = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
            if acc.len() != g.len() {
                return Err(Error::shape("add_grads", &[acc.len()], &[g.len()]));
            }
            acc.iter_mut().zip(g).for_each(|(a, x)| *a += weight * x);
            t.set_grad(acc)?;
        }
        Ok(())
    }

    /// Stores the gradient of every bound parameter; unreachable ones get zeros.
    pub fn absorb_grads(&mut self, bindings: &Bindings, grads: &mut Gradients) -> Result<()> {
        for (name, t) in &mut self.params {
            let var = bindings.get(name)?;
            let g = grads.take(var).unwrap_or_else(|| vec![0.0; t.numel()]);
            t.set_grad(g)?;
        }
        Ok(())
    }

    /// Adds `weight * grad` into each parameter's gradient buffer.
    pub fn accumulate_grads(&mut self, other: &ParamStore, weight: f64) -> Result<()> {
        for (name, t) in &mut self.params {
            let src = other
                .params
                .get(name)
                .and_then(|o| o.grad())
                .ok_or_else(|| Error::Autodiff(format!("missing gradient for `{name}`")))?;
            let mut acc = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; src.len()]);
            acc.iter_mut().zip(src).for_each(|(a, g)| *a += weight * g);
            t.set_grad(acc)?;
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }
}
