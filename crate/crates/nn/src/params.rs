use std::sync::Arc;

use rand::Rng;

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    value: Arc<Tensor<T>>,
}

impl<T> Param<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Values are reference counted so a graph can borrow them without copying;
/// updates clone-on-write only if a graph is still alive.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Param { name: name.into(), value: Arc::new(value) });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.params[id.0].value)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar weights and biases.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replace a value, keeping its dims.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let current = self.get(id).dims();
        if value.dims() != current {
            return Err(NnError::Shape(format!(
                "parameter `{}` expects {:?}, got {:?}",
                self.name(id),
                current,
                value.dims()
            )));
        }
        self.params[id.0].value = Arc::new(value);
        Ok(())
    }

    /// Same parameters, different element type. Ids are preserved.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: Arc::new(p.value.cast()) })
                .collect(),
        }
    }

    /// Copy all values from `other`, matched by name.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for i in 0..self.params.len() {
            let name = self.params[i].name.clone();
            let src = other.find(&name).ok_or(NnError::UnknownParam(name))?;
            self.set(ParamId(i), other.get(src).clone())?;
        }
        Ok(())
    }
}

/// He-uniform initialisation: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn he_uniform<T: Scalar, R: Rng + ?Sized>(dims: [usize; 4], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec(dims, data).expect("init dims")
}
