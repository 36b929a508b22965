use std::collections::HashMap;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Named trainable matrices, kept in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    lookup: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        let id = self.entries.len();
        self.lookup.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            grad: None,
        });
        ParamId(id)
    }

    /// Weight matrix with entries uniform in `[-1/sqrt(rows), 1/sqrt(rows)]`.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (rows as f64).sqrt();
        self.insert(name, Tensor::uniform(rows, cols, bound, rng))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Sets every gradient to zeros.
    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = Some(Tensor::zeros(e.value.rows(), e.value.cols()));
        }
    }

    pub fn clear_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Adds `scale * grad` into the stored gradients.
    pub fn accumulate(&mut self, grads: &[(ParamId, Tensor<T>)], scale: T) -> Result<()> {
        for (id, g) in grads {
            let e = &mut self.entries[id.0];
            if g.shape() != e.value.shape() {
                return Err(Error::Shape {
                    op: "accumulate",
                    lhs: e.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let acc = e
                .grad
                .get_or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a = *a + scale * b;
            }
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| e.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .map(|v| {
                let v = v.to_f();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so that their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = T::from_f(max_norm / norm);
            for g in self.entries.iter_mut().filter_map(|e| e.grad.as_mut()) {
                for v in g.data_mut() {
                    *v = *v * s;
                }
            }
        }
        norm
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    grad: e.grad.as_ref().map(Tensor::cast),
                })
                .collect(),
            lookup: self.lookup.clone(),
        }
    }
}
