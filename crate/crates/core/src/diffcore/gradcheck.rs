use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Var};
use crate::error::Result;
use crate::scalar::Real;

/// Central finite-difference check of reverse-mode gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub eps: f64,
    /// Check at most this many entries per parameter (chosen at random).
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_entries: None,
            seed: 0,
        }
    }
}

impl GradCheck {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }

    pub fn sampled(mut self, max_entries: usize, seed: u64) -> Self {
        self.max_entries = Some(max_entries);
        self.seed = seed;
        self
    }

    /// Returns `max |analytic - numeric| / max(1, |numeric|)` over the checked
    /// entries of every parameter. `f` builds a scalar from the bound params.
    pub fn run<T, F>(&self, params: &mut ParamStore<T>, f: F) -> Result<f64>
    where
        T: Real,
        F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
    {
        assert!(self.eps > 0.0, "eps must be positive");
        let mut g = Graph::new();
        let loss = f(&mut g, params)?;
        let analytic = if g.requires_grad(loss) {
            g.backward(loss)?;
            g.param_grads()?
        } else {
            Vec::new()
        };

        let eval = |p: &ParamStore<T>| -> Result<f64> {
            let mut g = Graph::new();
            let l = f(&mut g, p)?;
            Ok(g.value(l).item().to_f())
        };

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut worst = 0.0f64;
        for (id, grad) in &analytic {
            let n = grad.len();
            let entries: Vec<usize> = match self.max_entries {
                Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
                _ => (0..n).collect(),
            };
            for k in entries {
                let orig = params.value(*id).data()[k];
                params.value_mut(*id).data_mut()[k] = T::from_f(orig.to_f() + self.eps);
                let plus = eval(params)?;
                params.value_mut(*id).data_mut()[k] = T::from_f(orig.to_f() - self.eps);
                let minus = eval(params)?;
                params.value_mut(*id).data_mut()[k] = orig;
                let numeric = (plus - minus) / (2.0 * self.eps);
                let a = grad.data()[k].to_f();
                worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
            }
        }
        Ok(worst)
    }
}

/// Convenience wrapper: full check at step `eps`.
pub fn grad_check<T, F>(params: &mut ParamStore<T>, eps: f64, f: F) -> Result<f64>
where
    T: Real,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    GradCheck::new(eps).run(params, f)
}
