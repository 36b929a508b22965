//! REINFORCE with the agent-permutation-symmetric baseline, the epoch loop,
//! fine-tuning and checkpoints.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::decoder::prepare;
use crate::diffcore::{AdamState, Graph, ParamId, Tensor, Var};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::problems::{gen_uniform_with, Instance, ProblemKind};
use crate::rollout::{decode_batch, infer, random_depot, sample_permutations, Decode, Permutation, Trajectory};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Customers per generated instance.
    pub n: usize,
    /// Inclusive range for the agent count.
    pub agents: [usize; 2],
    /// Inclusive range for the depot count (multi-depot kinds).
    #[serde(default = "one_one")]
    pub depots: [usize; 2],
    pub batch_size: usize,
    pub epoch_size: usize,
    pub epochs: usize,
    /// Permutations (rollouts) per instance.
    pub k: usize,
    pub lr: f64,
    #[serde(default = "unit")]
    pub lr_decay: f64,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    #[serde(default)]
    pub clip_grad: Option<f64>,
    /// Size of the fixed greedy validation set evaluated after each epoch.
    #[serde(default)]
    pub validation: usize,
}

fn one_one() -> [usize; 2] {
    [1, 1]
}

fn unit() -> f64 {
    1.0
}

impl TrainConfig {
    /// Full-size settings: batch 256, 500 epochs of 256000 instances, K=60,
    /// M in [2, 10], lr 1e-4.
    pub fn full(kind: ProblemKind, n: usize) -> Self {
        Self {
            model: ModelConfig::full(kind),
            n,
            agents: [2, 10],
            depots: if kind.is_multi_depot() { [2, 10] } else { [1, 1] },
            batch_size: 256,
            epoch_size: 256_000,
            epochs: 500,
            k: 60,
            lr: 1e-4,
            lr_decay: 1.0,
            seed: 0,
            clip_grad: Some(1.0),
            validation: 0,
        }
    }

    /// Laptop-sized settings.
    pub fn desk(kind: ProblemKind, n: usize) -> Self {
        Self {
            model: ModelConfig::desk(kind),
            agents: [2, 3],
            depots: if kind.is_multi_depot() { [2, 3] } else { [1, 1] },
            batch_size: 32,
            epoch_size: 2048,
            epochs: 30,
            k: 8,
            lr: 1e-3,
            validation: 64,
            ..Self::full(kind, n)
        }
    }

    pub fn check(&self) -> Result<()> {
        self.model.check()?;
        let kind = self.model.kind;
        let bad = |m: String| Err(Error::Config(m));
        if self.k < 2 {
            return bad(format!("K must be at least 2, got {}", self.k));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        let [lo, hi] = self.agents;
        let cap = if kind == ProblemKind::Mpdp { self.n / 2 } else { self.n };
        if lo < 1 || lo > hi || hi > cap {
            return bad(format!("agent range [{lo}, {hi}] must lie within [1, {cap}]"));
        }
        let [dl, dh] = self.depots;
        if dl < 1 || dl > dh || (!kind.is_multi_depot() && dh != 1) {
            return bad(format!("invalid depot range [{dl}, {dh}] for {kind}"));
        }
        if self.lr.is_nan() || self.lr <= 0.0 || self.lr_decay.is_nan() || self.lr_decay <= 0.0 {
            return bad("lr and lr_decay must be positive".into());
        }
        Ok(())
    }

    /// Draws one training instance.
    pub fn sample_instance<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Instance> {
        let m = rng.gen_range(self.agents[0]..=self.agents[1]);
        let d = rng.gen_range(self.depots[0]..=self.depots[1]);
        gen_uniform_with(self.model.kind, self.n, d, m, rng)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.epoch_size.div_ceil(self.batch_size)
    }
}

/// Mean of the rollout objectives of one instance, taken relative to the
/// first so that identical objectives give that exact value back.
pub fn aps_baseline(objectives: &[f64]) -> f64 {
    let Some(&first) = objectives.first() else {
        return 0.0;
    };
    first + objectives.iter().map(|o| o - first).sum::<f64>() / objectives.len() as f64
}

/// `sum_k adv_k * logp_k / K` with the advantages as constants.
pub fn surrogate<T: Real>(g: &mut Graph<T>, log_probs: Var, advantages: &[f64]) -> Result<Var> {
    let k = advantages.len();
    let adv = g.constant(Tensor::from_f64(k, 1, advantages)?);
    let w = g.mul(log_probs, adv)?;
    let s = g.sum_all(w);
    Ok(g.scale(s, T::from_f(1.0 / k as f64)))
}

/// Loss contribution and rollouts of one instance.
pub struct InstanceLoss {
    pub loss: Var,
    pub trajectories: Vec<Trajectory>,
    pub baseline: f64,
}

/// `K` sampled rollouts under `K` random agent orders sharing one encoder
/// pass, and their APS surrogate.
pub fn aps_loss<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    inst: &Instance,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<InstanceLoss> {
    let perms = sample_permutations(inst.agents, k, rng);
    let firsts: Vec<usize> = (0..k).map(|_| random_depot(inst, rng)).collect();
    let emb = encode(g, &model.store, &model.enc, &model.cfg, inst, None)?;
    let prep = prepare(g, &model.store, &model.dec, &emb)?;
    let batch = decode_batch(g, model, &emb, &prep, inst, &perms, &firsts, Decode::Sample(rng))?;
    let objs: Vec<f64> = batch.trajectories.iter().map(|t| t.objective).collect();
    let baseline = aps_baseline(&objs);
    let adv: Vec<f64> = objs.iter().map(|o| o - baseline).collect();
    let loss = surrogate(g, batch.log_probs, &adv)?;
    Ok(InstanceLoss {
        loss,
        trajectories: batch.trajectories,
        baseline,
    })
}

/// Surrogate on recorded actions with given advantages.
pub fn forced_surrogate<T: Real>(
    g: &mut Graph<T>,
    model: &Model<T>,
    inst: &Instance,
    trajs: &[Trajectory],
    advantages: &[f64],
) -> Result<Var> {
    let perms: Vec<Permutation> = trajs.iter().map(|t| t.perm.clone()).collect();
    let firsts: Vec<usize> = trajs.iter().map(|t| t.first_depot).collect();
    let seqs: Vec<Vec<usize>> = trajs.iter().map(|t| t.actions.clone()).collect();
    let emb = encode(g, &model.store, &model.enc, &model.cfg, inst, None)?;
    let prep = prepare(g, &model.store, &model.dec, &emb)?;
    let batch = decode_batch(g, model, &emb, &prep, inst, &perms, &firsts, Decode::Forced(&seqs))?;
    surrogate(g, batch.log_probs, advantages)
}

/// Seed for the rng of instance `index` in `batch` of `epoch`.
pub fn instance_seed(seed: u64, epoch: usize, batch: usize, index: usize) -> [u8; 32] {
    let mut out = [0u8; 32];
    for (i, v) in [seed, epoch as u64, batch as u64, index as u64].iter().enumerate() {
        out[i * 8..(i + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    out
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_obj: f64,
    pub mean_baseline: f64,
    pub lr: f64,
    /// Seconds since training started.
    pub wallclock: f64,
    /// Mean greedy objective on the validation set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_obj: Option<f64>,
}

/// Result of one optimizer step.
#[derive(Clone, Debug)]
pub struct StepStats {
    pub mean_obj: f64,
    pub mean_baseline: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

type Grads = Vec<(ParamId, Tensor<f32>)>;

/// Gradients of the mean APS loss over `instances`, merged in order.
pub fn batch_gradients(
    model: &Model<f32>,
    instances: &[(Instance, [u8; 32])],
    k: usize,
) -> Result<(Grads, StepStats)> {
    let per: Vec<Result<(Grads, f64, f64, f64)>> = instances
        .par_iter()
        .map(|(inst, seed)| {
            let mut rng = ChaCha8Rng::from_seed(*seed);
            let mut g = Graph::new();
            let out = aps_loss(&mut g, model, inst, k, &mut rng)?;
            let loss = g.value(out.loss).item().to_f();
            if !loss.is_finite() {
                return Err(Error::NonFinite("loss"));
            }
            g.backward(out.loss)?;
            let mean_obj = aps_baseline(&out.trajectories.iter().map(|t| t.objective).collect::<Vec<_>>());
            Ok((g.param_grads()?, mean_obj, out.baseline, loss))
        })
        .collect();
    let b = instances.len() as f64;
    let mut merged: Grads = Vec::new();
    let (mut obj, mut base, mut loss) = (0.0, 0.0, 0.0);
    for r in per {
        let (grads, o, bl, l) = r?;
        obj += o;
        base += bl;
        loss += l;
        if merged.is_empty() {
            merged = grads
                .into_iter()
                .map(|(id, t)| (id, t.map(|v| v / b as f32)))
                .collect();
        } else {
            for ((_, acc), (_, t)) in merged.iter_mut().zip(&grads) {
                for (a, &v) in acc.data_mut().iter_mut().zip(t.data()) {
                    *a += v / b as f32;
                }
            }
        }
    }
    let stats = StepStats {
        mean_obj: obj / b,
        mean_baseline: base / b,
        loss: loss / b,
        grad_norm: 0.0,
    };
    Ok((merged, stats))
}

/// One optimizer update on a batch.
pub fn train_step(
    model: &mut Model<f32>,
    adam: &mut AdamState<f32>,
    instances: &[(Instance, [u8; 32])],
    k: usize,
    clip: Option<f64>,
) -> Result<StepStats> {
    let (grads, mut stats) = batch_gradients(model, instances, k)?;
    model.store.zero_grad();
    model.store.accumulate(&grads, 1.0)?;
    stats.grad_norm = match clip {
        Some(c) => model.store.clip_grad_norm(c),
        None => model.store.grad_norm(),
    };
    if !stats.grad_norm.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    adam.step(&mut model.store)?;
    Ok(stats)
}

/// Fixed validation instances for `cfg`.
pub fn validation_set(cfg: &TrainConfig) -> Result<Vec<Instance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0076_616c_6964);
    (0..cfg.validation).map(|_| cfg.sample_instance(&mut rng)).collect()
}

pub fn mean_greedy_objective(model: &Model<f32>, set: &[Instance]) -> Result<f64> {
    let objs = set
        .par_iter()
        .map(|i| infer(model, i, false, 1).map(|s| s.objective))
        .collect::<Result<Vec<_>>>()?;
    Ok(objs.iter().sum::<f64>() / objs.len().max(1) as f64)
}

/// Runs epochs `start_epoch..cfg.epochs`, calling `on_epoch` after each one
/// (for logging and checkpointing).
pub fn train(
    cfg: &TrainConfig,
    model: &mut Model<f32>,
    adam: &mut AdamState<f32>,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&EpochMetrics, &Model<f32>, &AdamState<f32>) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.check()?;
    if model.cfg != cfg.model {
        return Err(Error::Config("model does not match the training configuration".into()));
    }
    let val = validation_set(cfg)?;
    let clock = Instant::now();
    let mut log = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let lr = adam.lr;
        let (mut obj, mut base, mut count) = (0.0, 0.0, 0usize);
        for b in 0..cfg.batches_per_epoch() {
            let size = cfg.batch_size.min(cfg.epoch_size - b * cfg.batch_size);
            let mut gen = ChaCha8Rng::from_seed(instance_seed(cfg.seed, epoch, b, usize::MAX));
            let instances = (0..size)
                .map(|i| Ok((cfg.sample_instance(&mut gen)?, instance_seed(cfg.seed, epoch, b, i))))
                .collect::<Result<Vec<_>>>()?;
            let stats = train_step(model, adam, &instances, cfg.k, cfg.clip_grad).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged { epoch, batch: b },
                other => other,
            })?;
            obj += stats.mean_obj * size as f64;
            base += stats.mean_baseline * size as f64;
            count += size;
        }
        adam.end_epoch();
        let val_obj = if val.is_empty() { None } else { Some(mean_greedy_objective(model, &val)?) };
        let m = EpochMetrics {
            epoch,
            mean_obj: obj / count.max(1) as f64,
            mean_baseline: base / count.max(1) as f64,
            lr,
            wallclock: clock.elapsed().as_secs_f64(),
            val_obj,
        };
        on_epoch(&m, model, adam)?;
        log.push(m);
    }
    Ok(log)
}

/// Continues training a loaded model with a fresh optimizer at `cfg.lr`.
pub fn finetune(
    cfg: &TrainConfig,
    ckpt: Checkpoint,
    on_epoch: impl FnMut(&EpochMetrics, &Model<f32>, &AdamState<f32>) -> Result<()>,
) -> Result<(Model<f32>, AdamState<f32>, Vec<EpochMetrics>)> {
    ckpt.check_compatible(&cfg.model)?;
    let mut model = Model::from_store(cfg.model.clone(), &ckpt.store)?;
    let mut adam = AdamState::new(&model.store, cfg.lr, cfg.lr_decay);
    let log = train(cfg, &mut model, &mut adam, 0, on_epoch)?;
    Ok((model, adam, log))
}

#[cfg(test)]
mod tests;
