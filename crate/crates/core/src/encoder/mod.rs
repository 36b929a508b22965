//! Initial embeddings and the stacked partition-and-navigation encoder.

mod attention;
mod layer;
mod pe;
mod probe;

pub use attention::{attention, feed_forward, insert_alpha, rezero, AttnParams, AttnSpec, FfParams};
pub use layer::{Block, Dims, MergedLayer, MultiLayer, SingleLayer};
pub use pe::{rotate_positions, rotation_freq, rotation_pe, sinusoidal_pe, ROTATION_BASE, SINUSOIDAL_BASE};
pub use probe::{attention_probe, AttentionProbe, HeadScores, ProbeBlock, Relation};

use rand::Rng;

use crate::config::{EncoderKind, ModelConfig, PeKind};
use crate::diffcore::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::problems::{Instance, ProblemKind};
use crate::scalar::Real;

/// Encoder outputs as graph nodes: `M x d` agents, `N x d` customers and,
/// for multi-depot kinds, `D x d` depots.
#[derive(Clone, Copy, Debug)]
pub struct Embeddings {
    pub agents: Var,
    pub customers: Var,
    pub depots: Option<Var>,
}

#[derive(Clone, Debug)]
pub enum Layers {
    Single(Vec<SingleLayer>),
    Multi(Vec<MultiLayer>),
    Merged(Vec<MergedLayer>),
}

impl Layers {
    pub fn len(&self) -> usize {
        match self {
            Self::Single(v) => v.len(),
            Self::Multi(v) => v.len(),
            Self::Merged(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub customer_w: ParamId,
    pub customer_b: ParamId,
    pub depot_w: ParamId,
    pub depot_b: ParamId,
    /// Trainable dummy depot feeding the agent encodings (multi-depot).
    pub dummy: Option<ParamId>,
    /// Shared projection after rotation.
    pub w_pe: Option<ParamId>,
    /// Pickup and delivery offsets, `2 x d` (pickup/delivery problems).
    pub types: Option<ParamId>,
    pub layers: Layers,
}

impl EncoderParams {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.check()?;
        let d = cfg.dim;
        let customer_w = store.insert_uniform("enc.customer.w", 2, d, rng);
        let customer_b = store.insert("enc.customer.b", Tensor::zeros(1, d));
        let depot_w = store.insert_uniform("enc.depot.w", 2, d, rng);
        let depot_b = store.insert("enc.depot.b", Tensor::zeros(1, d));
        let multi = cfg.kind.is_multi_depot();
        let dummy = multi.then(|| store.insert_uniform("enc.dummy_depot", 1, d, rng));
        let w_pe = (cfg.pe == PeKind::Rotation).then(|| store.insert_uniform("enc.w_pe", d, d, rng));
        let types = (cfg.kind == ProblemKind::Mpdp).then(|| store.insert_uniform("enc.types", 2, d, rng));
        let dims = Dims {
            dim: d,
            hidden: cfg.ff_hidden,
            heads: cfg.heads,
        };
        let layers = match (cfg.encoder, multi) {
            (EncoderKind::Merged, _) => Layers::Merged(
                (0..cfg.layers)
                    .map(|l| MergedLayer::new(store, &format!("enc.layer{l}"), dims, rng))
                    .collect(),
            ),
            (EncoderKind::PartitionNavigation, false) => Layers::Single(
                (0..cfg.layers)
                    .map(|l| {
                        let pd = cfg.kind == ProblemKind::Mpdp;
                        SingleLayer::new(store, &format!("enc.layer{l}"), dims, cfg.navigation, pd, rng)
                    })
                    .collect(),
            ),
            (EncoderKind::PartitionNavigation, true) => Layers::Multi(
                (0..cfg.layers)
                    .map(|l| MultiLayer::new(store, &format!("enc.layer{l}"), dims, cfg.navigation, rng))
                    .collect(),
            ),
        };
        Ok(Self {
            customer_w,
            customer_b,
            depot_w,
            depot_b,
            dummy,
            w_pe,
            types,
            layers,
        })
    }
}

fn coords<T: Real>(points: &[[f64; 2]]) -> Tensor<T> {
    let flat: Vec<f64> = points.iter().flat_map(|p| [p[0], p[1]]).collect();
    Tensor::from_f64(points.len(), 2, &flat).expect("non-empty point set")
}

fn project<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, points: &[[f64; 2]], w: ParamId, b: ParamId) -> Result<Var> {
    let x = g.constant(coords(points));
    let w = g.param(store, w);
    let b = g.param(store, b);
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// Linear projections of the coordinates plus the agent encodings.
pub fn initial_embeddings<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &EncoderParams,
    cfg: &ModelConfig,
    inst: &Instance,
) -> Result<Embeddings> {
    if inst.kind != cfg.kind {
        return Err(Error::Config(format!("model built for {} given a {} instance", cfg.kind, inst.kind)));
    }
    let m = inst.agents;
    let mut customers = project(g, store, &inst.customers, p.customer_w, p.customer_b)?;
    if let Some(types) = p.types {
        let h = inst.pairs();
        let mut onehot = Tensor::zeros(inst.n(), 2);
        for c in 0..inst.n() {
            onehot.set(c, usize::from(c >= h), T::one());
        }
        let onehot = g.constant(onehot);
        let t = g.param(store, types);
        let offs = g.matmul(onehot, t)?;
        customers = g.add(customers, offs)?;
    }
    let depot_rows = project(g, store, &inst.depots, p.depot_w, p.depot_b)?;
    let (base, add_base, depots) = if cfg.kind.is_multi_depot() {
        let dummy = p
            .dummy
            .ok_or_else(|| Error::Config("multi-depot instance without dummy depot parameter".into()))?;
        (g.param(store, dummy), false, Some(depot_rows))
    } else {
        (depot_rows, true, None)
    };
    let agents = match cfg.pe {
        PeKind::Rotation => {
            let w = p
                .w_pe
                .ok_or_else(|| Error::Config("rotation encoding without projection parameter".into()))?;
            let w = g.param(store, w);
            let pe = rotation_pe(g, base, m, w)?;
            if add_base {
                let b = g.broadcast_rows(base, m)?;
                g.add(b, pe)?
            } else {
                pe
            }
        }
        PeKind::Sinusoidal => {
            let spe = g.constant(sinusoidal_pe(m, cfg.dim)?);
            let b = g.broadcast_rows(base, m)?;
            g.add(b, spe)?
        }
    };
    Ok(Embeddings {
        agents,
        customers,
        depots,
    })
}

/// Initial embeddings followed by every encoder layer.
pub fn encode<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &EncoderParams,
    cfg: &ModelConfig,
    inst: &Instance,
    probe: Option<&mut AttentionProbe>,
) -> Result<Embeddings> {
    if p.layers.len() != cfg.layers {
        return Err(Error::Config(format!(
            "config has {} layers, parameters have {}",
            cfg.layers,
            p.layers.len()
        )));
    }
    let e = initial_embeddings(g, store, p, cfg, inst)?;
    forward_layers(g, store, p, cfg.heads, inst, e, probe)
}

/// Runs the layer stack on given initial embeddings.
pub fn forward_layers<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    p: &EncoderParams,
    heads: usize,
    inst: &Instance,
    e: Embeddings,
    mut probe: Option<&mut AttentionProbe>,
) -> Result<Embeddings> {
    let Embeddings {
        mut agents,
        mut customers,
        mut depots,
    } = e;
    match &p.layers {
        Layers::Single(layers) => {
            let split = (inst.kind == ProblemKind::Mpdp).then(|| inst.pairs());
            for (l, layer) in layers.iter().enumerate() {
                (agents, customers) =
                    layer.forward(g, store, heads, agents, customers, split, probe.as_deref_mut(), l)?;
            }
        }
        Layers::Multi(layers) => {
            let mut d = depots.ok_or_else(|| Error::Config("multi-depot layers need depot rows".into()))?;
            for (l, layer) in layers.iter().enumerate() {
                (agents, d, customers) =
                    layer.forward(g, store, heads, agents, d, customers, probe.as_deref_mut(), l)?;
            }
            depots = Some(d);
        }
        Layers::Merged(layers) if !layers.is_empty() => {
            let m = g.shape(agents)[0];
            let n = g.shape(customers)[0];
            let nd = depots.map_or(0, |v| g.shape(v)[0]);
            let mut x = match depots {
                Some(dv) => g.concat_rows(&[agents, dv, customers])?,
                None => g.concat_rows(&[agents, customers])?,
            };
            for (l, layer) in layers.iter().enumerate() {
                x = layer.forward(g, store, heads, x, [m, nd, n], probe.as_deref_mut(), l)?;
            }
            agents = g.slice_rows(x, 0, m)?;
            if depots.is_some() {
                depots = Some(g.slice_rows(x, m, nd)?);
            }
            customers = g.slice_rows(x, m + nd, n)?;
        }
        Layers::Merged(_) => {}
    }
    Ok(Embeddings {
        agents,
        customers,
        depots,
    })
}
