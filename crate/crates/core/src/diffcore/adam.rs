use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments and schedule for one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
    pub lr: f64,
    /// Multiplicative per-epoch factor applied by [`AdamState::end_epoch`].
    pub lr_decay: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>, lr: f64, lr_decay: f64) -> Self {
        let zeros = || {
            params
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.rows(), e.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            first: zeros(),
            second: zeros(),
            step: 0,
            lr,
            lr_decay,
        }
    }

    pub fn end_epoch(&mut self) {
        self.lr *= self.lr_decay;
    }

    /// One Adam update using the stored gradients, which are cleared afterwards.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if self.first.len() != params.len() {
            return Err(Error::Optimizer(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                params.len()
            )));
        }
        if let Some(e) = params.entries().iter().find(|e| e.grad.is_none()) {
            return Err(Error::Optimizer(format!("missing gradient for {}", e.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for (i, e) in params.entries_mut().iter_mut().enumerate() {
            let g = e.grad.take().expect("checked above");
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (k, w) in e.value.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k].to_f();
                let mk = BETA1 * m[k].to_f() + (1.0 - BETA1) * gk;
                let vk = BETA2 * v[k].to_f() + (1.0 - BETA2) * gk * gk;
                m[k] = T::from_f(mk);
                v[k] = T::from_f(vk);
                let update = self.lr * (mk / bc1) / ((vk / bc2).sqrt() + EPSILON);
                if update != 0.0 {
                    *w = T::from_f(w.to_f() - update);
                }
            }
        }
        Ok(())
    }
}
