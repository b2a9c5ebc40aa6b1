use std::collections::BTreeMap;

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
}

/// Named trainable parameters with gradient slots. Iteration is lexicographic by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.entries.insert(name, Param { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::State(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("unknown parameter {name}")))
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        Ok(&self.get(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Matrix> {
        Ok(&self.get(name)?.grad)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Matrix) -> Result<()> {
        self.get_mut(name)?.grad.add_assign(grad)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.data().len()).sum()
    }

    /// Sum of squared entries over every parameter.
    pub fn l2_sq_norm(&self) -> f64 {
        self.entries.values().map(|p| p.value.sq_norm()).sum()
    }

    /// Adds `lambda * ||theta||^2` to the gradients and returns the penalty value.
    pub fn apply_l2_penalty(&mut self, lambda: f64) -> f64 {
        if lambda == 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for p in self.entries.values_mut() {
            total += p.value.sq_norm();
            for (g, v) in p.grad.data_mut().iter_mut().zip(p.value.data()) {
                *g += 2.0 * lambda * v;
            }
        }
        lambda * total
    }
}
