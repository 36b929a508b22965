//! Multi-head attention, its temperature-free "sharp" variant, the
//! feed-forward block and ReZero residuals.

use rand::Rng;

use crate::diffcore::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::scalar::Real;

use super::probe::HeadScores;

/// Projections of one multi-head attention block.
#[derive(Clone, Debug)]
pub struct AttnParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wp: ParamId,
    /// Alternative query projection for rows at or after `QuerySplit::at`.
    pub wq_alt: Option<ParamId>,
}

impl AttnParams {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        alt_query: bool,
        rng: &mut R,
    ) -> Self {
        let wq = store.insert_uniform(format!("{prefix}.wq"), dim, dim, rng);
        let wk = store.insert_uniform(format!("{prefix}.wk"), dim, dim, rng);
        let wv = store.insert_uniform(format!("{prefix}.wv"), dim, dim, rng);
        let wp = store.insert_uniform(format!("{prefix}.wp"), dim, dim, rng);
        let wq_alt = alt_query.then(|| store.insert_uniform(format!("{prefix}.wq_alt"), dim, dim, rng));
        Self {
            wq,
            wk,
            wv,
            wp,
            wq_alt,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FfParams {
    pub w1: ParamId,
    pub w2: ParamId,
}

impl FfParams {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w1: store.insert_uniform(format!("{prefix}.w1"), dim, hidden, rng),
            w2: store.insert_uniform(format!("{prefix}.w2"), hidden, dim, rng),
        }
    }
}

/// Attention variant and options for one call.
#[derive(Clone, Copy, Debug)]
pub struct AttnSpec {
    pub heads: usize,
    /// Drop the `1/sqrt(d_k)` temperature.
    pub sharp: bool,
    /// Rows `at..` of the query input use `wq_alt`.
    pub query_split: Option<usize>,
}

impl AttnSpec {
    pub fn mha(heads: usize) -> Self {
        Self {
            heads,
            sharp: false,
            query_split: None,
        }
    }

    pub fn mhsa(heads: usize) -> Self {
        Self {
            heads,
            sharp: true,
            query_split: None,
        }
    }

    pub fn split_queries(mut self, at: Option<usize>) -> Self {
        self.query_split = at;
        self
    }
}

/// `Concat(head_1..head_H) W_P` with `head_i = softmax(Q_i K_i^T [/ sqrt(d_k)]) V_i`.
pub fn attention<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &AttnParams,
    x: Var,
    c: Var,
    spec: AttnSpec,
    mut probe: Option<&mut Vec<HeadScores>>,
) -> Result<Var> {
    let wq = g.param(store, p.wq);
    let wk = g.param(store, p.wk);
    let wv = g.param(store, p.wv);
    let wp = g.param(store, p.wp);
    let [n, dim] = g.shape(x);
    let q = match (spec.query_split, p.wq_alt) {
        (Some(at), Some(alt)) if at > 0 && at < n => {
            let top = g.slice_rows(x, 0, at)?;
            let bottom = g.slice_rows(x, at, n - at)?;
            let wq_alt = g.param(store, alt);
            let qt = g.matmul(top, wq)?;
            let qb = g.matmul(bottom, wq_alt)?;
            g.concat_rows(&[qt, qb])?
        }
        (Some(0), Some(alt)) => {
            let wq_alt = g.param(store, alt);
            g.matmul(x, wq_alt)?
        }
        _ => g.matmul(x, wq)?,
    };
    let k = g.matmul(c, wk)?;
    let v = g.matmul(c, wv)?;
    let dk = dim / spec.heads;
    let temp = T::from_f(1.0 / (dk as f64).sqrt());
    let mut outs = Vec::with_capacity(spec.heads);
    for h in 0..spec.heads {
        let qh = g.slice_cols(q, h * dk, dk)?;
        let kh = g.slice_cols(k, h * dk, dk)?;
        let vh = g.slice_cols(v, h * dk, dk)?;
        let mut scores = g.matmul_nt(qh, kh)?;
        if !spec.sharp {
            scores = g.scale(scores, temp);
        }
        let att = g.softmax_rows(scores)?;
        if let Some(rec) = probe.as_deref_mut() {
            rec.push(HeadScores::new(h, g.value(scores), g.value(att)));
        }
        outs.push(g.matmul(att, vh)?);
    }
    let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
    g.matmul(cat, wp)
}

/// `ReLU(X W_1) W_2`.
pub fn feed_forward<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, p: &FfParams, x: Var) -> Result<Var> {
    let w1 = g.param(store, p.w1);
    let w2 = g.param(store, p.w2);
    let h = g.matmul(x, w1)?;
    let h = g.relu(h)?;
    g.matmul(h, w2)
}

/// `alpha * f + x` with a trainable scalar `alpha`.
pub fn rezero<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, alpha: ParamId, f: Var, x: Var) -> Result<Var> {
    let a = g.param(store, alpha);
    let scaled = g.scale_by(f, a)?;
    g.add(scaled, x)
}

pub fn insert_alpha<T: Real>(store: &mut ParamStore<T>, name: String) -> ParamId {
    store.insert(name, Tensor::scalar(T::zero()))
}
