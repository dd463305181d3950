use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::array::Tensor;

#[derive(Clone)]
pub(crate) struct Param<S> {
    pub value: Tensor<S>,
    pub grad: Option<Tensor<S>>,
    pub trainable: bool,
    // Adam moment slots, lazily allocated on the first step.
    pub m: Option<Tensor<S>>,
    pub v: Option<Tensor<S>>,
}

/// All learnable arrays of a model plus non-learnable buffers (e.g. batch
/// norm running statistics). Iteration order is insertion order, which keeps
/// updates and serialization deterministic.
#[derive(Clone)]
pub struct ParameterStore<S> {
    pub(crate) params: IndexMap<String, Param<S>>,
    pub(crate) buffers: IndexMap<String, Tensor<S>>,
}

impl<S: Scalar> Default for ParameterStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new() -> Self {
        ParameterStore {
            params: IndexMap::new(),
            buffers: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>) {
        self.insert_with(name, value, true);
    }

    pub fn insert_frozen(&mut self, name: &str, value: Tensor<S>) {
        self.insert_with(name, value, false);
    }

    fn insert_with(&mut self, name: &str, value: Tensor<S>, trainable: bool) {
        self.params.insert(
            name.to_string(),
            Param {
                value,
                grad: None,
                trainable,
                m: None,
                v: None,
            },
        );
    }

    pub fn insert_buffer(&mut self, name: &str, value: Tensor<S>) {
        self.buffers.insert(name.to_string(), value);
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<S>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<S>> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn is_trainable(&self, name: &str) -> Result<bool> {
        self.params
            .get(name)
            .map(|p| p.trainable)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<Option<&Tensor<S>>> {
        self.params
            .get(name)
            .map(|p| p.grad.as_ref())
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn accumulate_grad(&mut self, name: &str, g: Tensor<S>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        match &mut p.grad {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn buffer_names(&self) -> impl Iterator<Item = &str> {
        self.buffers.keys().map(|s| s.as_str())
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Total number of trainable scalar entries.
    pub fn n_trainable_elems(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Fold batch statistics into running buffers: `run = mom*run + (1-mom)*batch`.
    pub fn update_running_stats(&mut self, name: &str, mean: &[S], var: &[S], momentum: f64) -> Result<()> {
        let mom = S::from_f64_lossy(momentum);
        let one_m = S::one() - mom;
        {
            let rm = self.buffer_mut(&format!("{name}.running_mean"))?;
            for (r, &b) in rm.data_mut().iter_mut().zip(mean) {
                *r = mom * *r + one_m * b;
            }
        }
        let rv = self.buffer_mut(&format!("{name}.running_var"))?;
        for (r, &b) in rv.data_mut().iter_mut().zip(var) {
            *r = mom * *r + one_m * b;
        }
        Ok(())
    }
}
