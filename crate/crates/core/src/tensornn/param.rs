use std::collections::HashMap;

use super::{Matrix, NnError};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Trainable tensor with its gradient buffer. Rank is 1 (biases) or 2 (weights, `out×in`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape, values: vec![0.0; n], grad: vec![0.0; n] }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// Matrix view used on the tape: `out×in` for weights, `1×n` for vectors.
    pub fn as_matrix(&self) -> Matrix {
        let (r, c) = match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => (1, other.iter().product()),
        };
        Matrix::from_vec(r, c, self.values.clone()).expect("param shape consistent")
    }
}

/// Owns every trainable tensor of a model. Layers refer to entries by [`ParamId`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, tensor: ParamTensor) -> Result<ParamId, NnError> {
        if self.by_name.contains_key(&tensor.name) {
            return Err(NnError::DuplicateParam(tensor.name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(tensor.name.clone(), id);
        self.params.push(tensor);
        Ok(id)
    }

    /// Adds a `fan_out×fan_in` weight drawn uniformly from `±√(6/(in+out))`.
    pub fn add_weight(&mut self, name: &str, fan_out: usize, fan_in: usize, rng: &SplitMix64) -> Result<ParamId, NnError> {
        let mut t = ParamTensor::zeros(name, vec![fan_out, fan_in]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut r = rng.substream(name);
        for v in &mut t.values {
            *v = r.uniform(-bound, bound);
        }
        self.add(t)
    }

    pub fn add_bias(&mut self, name: &str, len: usize) -> Result<ParamId, NnError> {
        self.add(ParamTensor::zeros(name, vec![len]))
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(ParamTensor::numel).sum()
    }

    /// Copies values from `other`, which must have the same names and shapes in the same order.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        if other.params.len() != self.params.len() {
            return Err(NnError::Shape(format!(
                "parameter count {} vs {}",
                other.params.len(),
                self.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(NnError::Shape(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    src.name, src.shape, dst.name, dst.shape
                )));
            }
            dst.values.copy_from_slice(&src.values);
        }
        Ok(())
    }
}
