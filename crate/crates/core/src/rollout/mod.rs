//! Sequential route construction under agent permutations, greedy and
//! sampled decoding, and augmented inference.

mod state;

pub use state::{check_perm, DecodeState, Node, Slot};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{feasibility_mask, prepare, step_logits, Prepared};
use crate::diffcore::{masked_softmax_rows, Graph, Tensor, Var};
use crate::encoder::{encode, Embeddings};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::problems::{augment8, minmax_objective, Instance, RouteSet};
use crate::scalar::Real;

/// Agent order `o`, stored 0-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        check_perm(&order, order.len())?;
        Ok(Self(order))
    }

    pub fn identity(m: usize) -> Self {
        Self((0..m).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `k` independent uniform shuffles of `0..m` (duplicates allowed).
pub fn sample_permutations<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Vec<Permutation> {
    (0..k)
        .map(|_| {
            let mut o: Vec<usize> = (0..m).collect();
            o.shuffle(rng);
            Permutation(o)
        })
        .collect()
}

/// Identity followed by `n - 1` shuffles from a stream fixed by `seed`, so
/// the set for `n` is a prefix of the set for any larger `n`.
pub fn inference_permutations(m: usize, n: usize, seed: u64) -> Vec<Permutation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Permutation::identity(m)];
    out.extend(sample_permutations(m, n.saturating_sub(1), &mut rng));
    out.truncate(n);
    out
}

/// How actions are chosen.
pub enum Decode<'a> {
    /// Highest logit, lowest index on ties.
    Greedy,
    /// Draw from the policy.
    Sample(&'a mut dyn RngCore),
    /// Replay recorded actions, one sequence per rollout.
    Forced(&'a [Vec<usize>]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub perm: Permutation,
    pub first_depot: usize,
    pub actions: Vec<usize>,
    pub solution: RouteSet,
    pub objective: f64,
    pub log_prob: f64,
}

/// Rollouts of one instance decoded in lockstep.
pub struct Batch {
    pub trajectories: Vec<Trajectory>,
    /// `K x 1` summed log-probabilities as a graph node.
    pub log_probs: Var,
}

fn argmax_allowed<T: Real>(row: &[T], mask: &[bool]) -> usize {
    let mut best = None::<(usize, T)>;
    for (j, (&v, &ok)) in row.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best.expect("mask checked non-empty").0
}

fn draw<T: Real>(probs: &[T], mask: &[bool], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, (&p, &ok)) in probs.iter().zip(mask).enumerate() {
        if !ok {
            continue;
        }
        last = j;
        acc += p.to_f();
        if u < acc {
            return j;
        }
    }
    last
}

/// Decodes `perms.len()` rollouts of `inst` in lockstep on already encoded
/// embeddings. `first_depots[k]` is the starting node of rollout `k`
/// (ignored for single-depot kinds).
#[allow(clippy::too_many_arguments)]
pub fn decode_batch<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    emb: &Embeddings,
    prep: &Prepared,
    inst: &Instance,
    perms: &[Permutation],
    first_depots: &[usize],
    mut mode: Decode<'_>,
) -> Result<Batch> {
    let k = perms.len();
    if k == 0 || first_depots.len() != k {
        return Err(Error::Config("need one start depot per permutation and at least one rollout".into()));
    }
    if let Decode::Forced(seqs) = &mode {
        if seqs.len() != k {
            return Err(Error::Config(format!("{} forced sequences for {k} rollouts", seqs.len())));
        }
    }
    let mut states = perms
        .iter()
        .zip(first_depots)
        .map(|(p, &d)| DecodeState::new(inst, p.as_slice(), d))
        .collect::<Result<Vec<_>>>()?;
    let steps = DecodeState::total_steps(inst);
    let mut actions = vec![Vec::with_capacity(steps); k];
    let mut total: Option<Var> = None;
    for t in 0..steps {
        let u = step_logits(g, &model.store, &model.dec, prep, emb, &states, inst)?;
        let mask = feasibility_mask(&states, inst)?;
        let s = states[0].num_slots();
        let chosen: Vec<usize> = match &mut mode {
            Decode::Greedy => (0..k)
                .map(|r| argmax_allowed(g.value(u).row(r), &mask[r * s..(r + 1) * s]))
                .collect(),
            Decode::Sample(rng) => {
                let probs = masked_softmax_rows(g.value(u), &mask)?;
                (0..k)
                    .map(|r| draw(probs.row(r), &mask[r * s..(r + 1) * s], &mut **rng))
                    .collect()
            }
            Decode::Forced(seqs) => (0..k)
                .map(|r| {
                    seqs[r]
                        .get(t)
                        .copied()
                        .ok_or(Error::IllegalAction { action: usize::MAX, step: t })
                })
                .collect::<Result<_>>()?,
        };
        let (lp, _) = g.pick_log_prob(u, &mask, &chosen)?;
        total = Some(match total {
            Some(acc) => g.add(acc, lp)?,
            None => lp,
        });
        for (r, &a) in chosen.iter().enumerate() {
            states[r].step(inst, a)?;
            actions[r].push(a);
        }
    }
    let log_probs = total.expect("at least one step");
    let mut trajectories = Vec::with_capacity(k);
    for (r, st) in states.iter().enumerate() {
        let solution = st.solution()?;
        let objective = minmax_objective(&solution, inst)?;
        trajectories.push(Trajectory {
            perm: perms[r].clone(),
            first_depot: first_depots[r],
            actions: std::mem::take(&mut actions[r]),
            solution,
            objective,
            log_prob: g.value(log_probs).get(r, 0).to_f(),
        });
    }
    Ok(Batch {
        trajectories,
        log_probs,
    })
}

/// Encodes `inst` and decodes one rollout per permutation.
pub fn rollout_many<T: Real>(
    model: &Model<T>,
    inst: &Instance,
    perms: &[Permutation],
    first_depots: &[usize],
    mode: Decode<'_>,
) -> Result<Vec<Trajectory>> {
    let mut g = Graph::new();
    let emb = encode(&mut g, &model.store, &model.enc, &model.cfg, inst, None)?;
    let prep = prepare(&mut g, &model.store, &model.dec, &emb)?;
    Ok(decode_batch(&mut g, model, &emb, &prep, inst, perms, first_depots, mode)?.trajectories)
}

/// Single rollout; returns the routes and the summed log-probability.
/// Sampled multi-depot rollouts start from a uniformly drawn depot, greedy
/// ones from depot 0.
pub fn rollout<T: Real>(
    model: &Model<T>,
    inst: &Instance,
    perm: &Permutation,
    mode: Decode<'_>,
) -> Result<(RouteSet, f64)> {
    let (first, mode) = match mode {
        Decode::Sample(rng) => (random_depot(inst, rng), Decode::Sample(rng)),
        other => (0, other),
    };
    let t = rollout_many(model, inst, std::slice::from_ref(perm), &[first], mode)?;
    let t = t.into_iter().next().expect("one rollout");
    Ok((t.solution, t.log_prob))
}

pub fn random_depot(inst: &Instance, rng: &mut dyn RngCore) -> usize {
    if inst.kind.is_multi_depot() {
        rng.gen_range(0..inst.num_depots())
    } else {
        0
    }
}

/// Best solution found by [`infer`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solved {
    pub objective: f64,
    pub routes: Vec<Vec<usize>>,
    /// Start and end depot of each route.
    pub depots: Vec<[usize; 2]>,
    pub permutation: Vec<usize>,
    pub aug_index: usize,
}

impl Solved {
    pub fn route_set(&self) -> RouteSet {
        RouteSet::new(
            self.routes
                .iter()
                .zip(&self.depots)
                .map(|(r, d)| crate::problems::Route::new(d[0], d[1], r.clone()))
                .collect(),
        )
    }
}

/// Seed of the permutation stream used at inference.
pub const INFER_PERM_SEED: u64 = 0x5eed;

/// Greedy rollouts over `n_per` permutations on each of 1 or 8 symmetric
/// copies; returns the best, with ties going to the first in (augmentation,
/// permutation) order. Instances outside the unit square are normalized for
/// the model, while objectives are measured on the original coordinates.
pub fn infer<T: Real>(model: &Model<T>, inst: &Instance, use_aug8: bool, n_per: usize) -> Result<Solved> {
    if n_per == 0 {
        return Err(Error::Config("n_per must be at least 1".into()));
    }
    let input = if inst.in_unit_square() { inst.clone() } else { inst.normalized().0 };
    let mut copies = augment8(&input);
    if !use_aug8 {
        copies.truncate(1);
    }
    let perms = inference_permutations(inst.agents, n_per, INFER_PERM_SEED);
    let firsts = vec![0; perms.len()];
    let per_aug: Vec<Result<Vec<Trajectory>>> = copies
        .par_iter()
        .map(|(_, copy)| rollout_many(model, copy, &perms, &firsts, Decode::Greedy))
        .collect();
    let mut best: Option<Solved> = None;
    for (a, trajs) in per_aug.into_iter().enumerate() {
        for t in trajs? {
            let objective = minmax_objective(&t.solution, inst)?;
            if best.as_ref().is_none_or(|b| objective < b.objective) {
                best = Some(Solved {
                    objective,
                    routes: t.solution.routes.iter().map(|r| r.customers.clone()).collect(),
                    depots: t.solution.routes.iter().map(|r| [r.start, r.end]).collect(),
                    permutation: t.perm.as_slice().to_vec(),
                    aug_index: a,
                });
            }
        }
    }
    Ok(best.expect("at least one rollout"))
}

/// Summed log-probabilities of recorded actions, recomputed from scratch.
pub fn teacher_forced_log_probs<T: Real>(model: &Model<T>, inst: &Instance, trajs: &[Trajectory]) -> Result<Tensor<T>> {
    let perms: Vec<_> = trajs.iter().map(|t| t.perm.clone()).collect();
    let firsts: Vec<_> = trajs.iter().map(|t| t.first_depot).collect();
    let seqs: Vec<_> = trajs.iter().map(|t| t.actions.clone()).collect();
    let mut g = Graph::new();
    let emb = encode(&mut g, &model.store, &model.enc, &model.cfg, inst, None)?;
    let prep = prepare(&mut g, &model.store, &model.dec, &emb)?;
    let b = decode_batch(&mut g, model, &emb, &prep, inst, &perms, &firsts, Decode::Forced(&seqs))?;
    Ok(g.value(b.log_probs).clone())
}
