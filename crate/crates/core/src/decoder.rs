//! Context embedding, glimpse attention and distance-biased logits.

use rand::Rng;

use crate::config::ModelConfig;
use crate::diffcore::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::encoder::{attention, AttnParams, AttnSpec, Embeddings};
use crate::error::{Error, Result};
use crate::problems::{dist, Instance, ProblemKind};
use crate::rollout::DecodeState;
use crate::scalar::Real;

/// Logit clipping constant.
pub const TANH_CLIP: f64 = 50.0;
/// Cap on the normalized distance before exponentiation.
pub const MAX_DIST_RATIO: f64 = 20.0;

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub w_emb: ParamId,
    /// `(2d + 2) x d`.
    pub w_step: ParamId,
    /// `3 x d`, or `5 x d` for pickup/delivery.
    pub w_length: ParamId,
    pub glimpse: AttnParams,
    pub w_l: ParamId,
    pub alpha_d: ParamId,
    pub heads: usize,
}

impl DecoderParams {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.dim;
        Self {
            w_emb: store.insert_uniform("dec.w_emb", d, d, rng),
            w_step: store.insert_uniform("dec.w_step", 2 * d + 2, d, rng),
            w_length: store.insert_uniform("dec.w_length", num_length_features(cfg.kind), d, rng),
            glimpse: AttnParams::new(store, "dec.glimpse", d, false, rng),
            w_l: store.insert_uniform("dec.w_l", d, d, rng),
            alpha_d: store.insert("dec.alpha_d", Tensor::scalar(-T::one())),
            heads: cfg.heads,
        }
    }
}

pub fn num_length_features(kind: ProblemKind) -> usize {
    if kind == ProblemKind::Mpdp {
        5
    } else {
        3
    }
}

/// Per-instance decoder inputs that do not change while decoding.
#[derive(Clone, Copy, Debug)]
pub struct Prepared {
    /// Candidate rows: `[agents; customers]` or `[depots; customers]`.
    pub candidates: Var,
    /// `candidates W_L`.
    pub keys: Var,
    /// `mean(all rows) W_emb`, `1 x d`.
    pub graph_context: Var,
    pub dim: usize,
}

pub fn prepare<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, p: &DecoderParams, e: &Embeddings) -> Result<Prepared> {
    let candidates = match e.depots {
        Some(d) => g.concat_rows(&[d, e.customers])?,
        None => g.concat_rows(&[e.agents, e.customers])?,
    };
    let all = match e.depots {
        Some(d) => g.concat_rows(&[e.agents, e.customers, d])?,
        None => g.concat_rows(&[e.agents, e.customers])?,
    };
    let mean = g.mean_rows(all);
    let w_emb = g.param(store, p.w_emb);
    let graph_context = g.matmul(mean, w_emb)?;
    let w_l = g.param(store, p.w_l);
    let keys = g.matmul(candidates, w_l)?;
    let dim = g.shape(candidates)[1];
    Ok(Prepared {
        candidates,
        keys,
        graph_context,
        dim,
    })
}

/// Scalar features of one state: the two step fractions and the length
/// features, in that order.
pub fn context_features(state: &DecodeState, inst: &Instance) -> Result<(Vec<f64>, Vec<f64>)> {
    if state.kind != inst.kind {
        return Err(Error::Config(format!(
            "state for {} used with a {} instance",
            state.kind, inst.kind
        )));
    }
    let m = state.agents as f64;
    let n = state.n as f64;
    let route_frac = (m - state.pos as f64) / m;
    let unserved = (0..state.n).filter(|&c| !state.visited[c]);
    match inst.kind {
        ProblemKind::Mpdp => {
            let depot = inst.depot(0);
            let pairs = inst.pairs();
            let left_pickups = (0..pairs).filter(|&c| !state.visited[c]).count();
            let (mut lp, mut ld, mut sum) = (0.0f64, 0.0f64, 0.0f64);
            for c in unserved {
                let r = dist(depot, inst.customer(c));
                if inst.is_pickup(c) {
                    lp = lp.max(r);
                } else {
                    ld = ld.max(r);
                    sum += dist(inst.customer(inst.partner(c)), inst.customer(c));
                }
            }
            let remaining = (state.agents - state.pos.min(state.agents) - 1).max(1) as f64;
            Ok((
                vec![route_frac, 2.0 * left_pickups as f64 / n],
                vec![state.length, state.longest_pd, lp, ld, sum / remaining],
            ))
        }
        ProblemKind::Mtsp => {
            let depot = inst.depot(0);
            let far = (0..state.n).map(|c| dist(depot, inst.customer(c))).fold(0.0, f64::max);
            let ld = unserved.map(|c| dist(depot, inst.customer(c))).fold(0.0, f64::max);
            Ok((vec![route_frac, state.left as f64 / n], vec![state.length, far, ld]))
        }
        ProblemKind::Mdvrp | ProblemKind::Fmdvrp => {
            let far = (0..state.n).map(|c| inst.nearest_depot_dist(c)).fold(0.0, f64::max);
            let ld = unserved.map(|c| inst.nearest_depot_dist(c)).fold(0.0, f64::max);
            Ok((vec![route_frac, state.left as f64 / n], vec![state.length, far, ld]))
        }
    }
}

/// `K x d` context rows for `K` states decoding the same instance.
pub fn context<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &DecoderParams,
    prep: &Prepared,
    e: &Embeddings,
    states: &[DecodeState],
    inst: &Instance,
) -> Result<Var> {
    let k = states.len();
    let agents: Vec<usize> = states.iter().map(DecodeState::current_agent).collect();
    let nodes: Vec<usize> = states.iter().map(DecodeState::node_slot).collect();
    let h_agent = g.gather_rows(e.agents, &agents)?;
    let h_node = g.gather_rows(prep.candidates, &nodes)?;
    let (mut step_f, mut len_f) = (Vec::with_capacity(2 * k), Vec::new());
    for s in states {
        let (a, b) = context_features(s, inst)?;
        step_f.extend(a);
        len_f.extend(b);
    }
    let nl = len_f.len() / k;
    let step_f = g.constant(Tensor::from_f64(k, 2, &step_f)?);
    let len_f = g.constant(Tensor::from_f64(k, nl, &len_f)?);
    let cat = g.concat_cols(&[h_agent, h_node, step_f])?;
    let w_step = g.param(store, p.w_step);
    let w_length = g.param(store, p.w_length);
    let a = g.matmul(cat, w_step)?;
    let b = g.matmul(len_f, w_length)?;
    let ab = g.add(a, b)?;
    g.add_row(ab, prep.graph_context)
}

/// `MHA(context, candidates)`.
pub fn glimpse<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &DecoderParams,
    prep: &Prepared,
    ctx: Var,
) -> Result<Var> {
    attention(g, store, &p.glimpse, ctx, prep.candidates, AttnSpec::mha(p.heads), None)
}

/// `exp(min(|x_node - x_j| / max_i |x_i - x_node|, 20))` over slots, the
/// max running over unvisited customers (ratio 1 when there are none).
pub fn distance_bias(state: &DecodeState, inst: &Instance) -> Vec<f64> {
    let here = state.node_point(inst);
    let norm = (0..state.n)
        .filter(|&c| !state.visited[c])
        .map(|c| dist(here, inst.customer(c)))
        .fold(0.0f64, f64::max);
    (0..state.num_slots())
        .map(|s| {
            let ratio = if norm > 1e-12 {
                (dist(here, state.slot_point(inst, s)) / norm).min(MAX_DIST_RATIO)
            } else {
                1.0
            };
            ratio.exp()
        })
        .collect()
}

/// Unmasked logits `C tanh(q (h W_L)^T / sqrt(d) + alpha_d * bias)`, `K x S`.
pub fn logits<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &DecoderParams,
    prep: &Prepared,
    query: Var,
    states: &[DecodeState],
    inst: &Instance,
) -> Result<Var> {
    let k = states.len();
    let scores = g.matmul_nt(query, prep.keys)?;
    let scores = g.scale(scores, T::from_f(1.0 / (prep.dim as f64).sqrt()));
    let s = g.shape(scores)[1];
    let mut bias = Vec::with_capacity(k * s);
    for st in states {
        bias.extend(distance_bias(st, inst));
    }
    let bias = g.constant(Tensor::from_f64(k, s, &bias)?);
    let alpha = g.param(store, p.alpha_d);
    let bias = g.scale_by(bias, alpha)?;
    let u = g.add(scores, bias)?;
    let u = g.tanh(u)?;
    Ok(g.scale(u, T::from_f(TANH_CLIP)))
}

/// Concatenated masks of `states`.
pub fn feasibility_mask(states: &[DecodeState], inst: &Instance) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for (r, s) in states.iter().enumerate() {
        let m = s.mask(inst);
        if !m.iter().any(|&b| b) {
            return Err(Error::AllMasked(r));
        }
        out.extend(m);
    }
    Ok(out)
}

/// One decoding step up to the logits.
pub fn step_logits<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &DecoderParams,
    prep: &Prepared,
    e: &Embeddings,
    states: &[DecodeState],
    inst: &Instance,
) -> Result<Var> {
    let ctx = context(g, store, p, prep, e, states, inst)?;
    let q = glimpse(g, store, p, prep, ctx)?;
    logits(g, store, p, prep, q, states, inst)
}
