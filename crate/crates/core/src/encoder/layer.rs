//! Encoder layers. Every sub-part is the same two-step residual pattern
//! `X^ = a * Attn(X, C) + X; X' = b * FF(X^) + X^`, so a layer is a wiring of
//! [`Block`]s.

use rand::Rng;

use super::attention::{attention, feed_forward, insert_alpha, rezero, AttnParams, AttnSpec, FfParams};
use super::probe::{AttentionProbe, HeadScores, Relation};
use crate::diffcore::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct Block {
    pub attn: AttnParams,
    pub ff: FfParams,
    pub alpha_attn: ParamId,
    pub alpha_ff: ParamId,
    pub sharp: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct Dims {
    pub dim: usize,
    pub hidden: usize,
    pub heads: usize,
}

impl Block {
    /// `alpha` is the 1-based index of the attention residual scalar; the
    /// feed-forward one is `alpha + 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dims: Dims,
        sharp: bool,
        alt_query: bool,
        alpha: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            attn: AttnParams::new(store, &format!("{prefix}.attn"), dims.dim, alt_query, rng),
            ff: FfParams::new(store, &format!("{prefix}.ff"), dims.dim, dims.hidden, rng),
            alpha_attn: insert_alpha(store, format!("{prefix}.alpha{alpha}")),
            alpha_ff: insert_alpha(store, format!("{prefix}.alpha{}", alpha + 1)),
            sharp,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        heads: usize,
        x: Var,
        c: Var,
        query_split: Option<usize>,
        probe: Option<&mut Vec<HeadScores>>,
    ) -> Result<Var> {
        let spec = if self.sharp { AttnSpec::mhsa(heads) } else { AttnSpec::mha(heads) };
        let a = attention(g, store, &self.attn, x, c, spec.split_queries(query_split), probe)?;
        let xh = rezero(g, store, self.alpha_attn, a, x)?;
        let f = feed_forward(g, store, &self.ff, xh)?;
        rezero(g, store, self.alpha_ff, f, xh)
    }
}

/// Runs a block, recording its scores under `relation` when probing.
#[allow(clippy::too_many_arguments)]
fn run<T: Real>(
    block: &Block,
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    heads: usize,
    x: Var,
    c: Var,
    split: Option<usize>,
    probe: &mut Option<&mut AttentionProbe>,
    layer: usize,
    relation: Relation,
) -> Result<Var> {
    match probe.as_deref_mut() {
        Some(p) => {
            let mut rec = Vec::new();
            let out = block.forward(g, store, heads, x, c, split, Some(&mut rec))?;
            p.push(layer, relation, rec);
            Ok(out)
        }
        None => block.forward(g, store, heads, x, c, split, None),
    }
}

/// Single-depot layer: navigation on customers, then agents attend to
/// customers and customers sharply attend to the updated agents.
#[derive(Clone, Debug)]
pub struct SingleLayer {
    pub navigation: Option<Block>,
    pub agent_customer: Block,
    pub customer_agent: Block,
}

impl SingleLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dims: Dims,
        navigation: bool,
        pickup_delivery: bool,
        rng: &mut R,
    ) -> Self {
        let navigation = navigation.then(|| Block::new(store, &format!("{prefix}.nav"), dims, false, false, 1, rng));
        Self {
            navigation,
            agent_customer: Block::new(store, &format!("{prefix}.ac"), dims, false, false, 3, rng),
            customer_agent: Block::new(store, &format!("{prefix}.ca"), dims, true, pickup_delivery, 5, rng),
        }
    }

    /// `split` is the first delivery row for pickup/delivery problems.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        heads: usize,
        h_a: Var,
        h_c: Var,
        split: Option<usize>,
        mut probe: Option<&mut AttentionProbe>,
        layer: usize,
    ) -> Result<(Var, Var)> {
        let x_c = match &self.navigation {
            Some(b) => run(b, g, store, heads, h_c, h_c, None, &mut probe, layer, Relation::CustomerCustomer)?,
            None => h_c,
        };
        let h_a2 = run(&self.agent_customer, g, store, heads, h_a, x_c, None, &mut probe, layer, Relation::AgentCustomer)?;
        let h_c2 = run(&self.customer_agent, g, store, heads, x_c, h_a2, split, &mut probe, layer, Relation::CustomerAgent)?;
        Ok((h_a2, h_c2))
    }
}

/// Multi-depot layer: navigation, then the depot-customer, agent-depot and
/// agent-customer partition parts in sequence.
#[derive(Clone, Debug)]
pub struct MultiLayer {
    pub navigation: Option<Block>,
    pub depot_customer: Block,
    pub customer_depot: Block,
    pub agent_depot: Block,
    pub depot_agent: Block,
    pub agent_customer: Block,
    pub customer_agent: Block,
}

impl MultiLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dims: Dims,
        navigation: bool,
        rng: &mut R,
    ) -> Self {
        let mut b = |name: &str, sharp: bool, alpha: usize| {
            Block::new(store, &format!("{prefix}.{name}"), dims, sharp, false, alpha, rng)
        };
        let navigation = navigation.then(|| b("nav", false, 1));
        Self {
            navigation,
            depot_customer: b("dc", false, 3),
            customer_depot: b("cd", true, 5),
            agent_depot: b("ad", true, 7),
            depot_agent: b("da", false, 9),
            agent_customer: b("ac", false, 11),
            customer_agent: b("ca", true, 13),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        heads: usize,
        h_a: Var,
        h_d: Var,
        h_c: Var,
        mut probe: Option<&mut AttentionProbe>,
        layer: usize,
    ) -> Result<(Var, Var, Var)> {
        let p = &mut probe;
        let x_c = match &self.navigation {
            Some(b) => run(b, g, store, heads, h_c, h_c, None, p, layer, Relation::CustomerCustomer)?,
            None => h_c,
        };
        let x_d = run(&self.depot_customer, g, store, heads, h_d, x_c, None, p, layer, Relation::DepotCustomer)?;
        let o_c = run(&self.customer_depot, g, store, heads, x_c, x_d, None, p, layer, Relation::CustomerDepot)?;
        let x_a = run(&self.agent_depot, g, store, heads, h_a, x_d, None, p, layer, Relation::AgentDepot)?;
        let h_d2 = run(&self.depot_agent, g, store, heads, x_d, x_a, None, p, layer, Relation::DepotAgent)?;
        let h_a2 = run(&self.agent_customer, g, store, heads, x_a, o_c, None, p, layer, Relation::AgentCustomer)?;
        let h_c2 = run(&self.customer_agent, g, store, heads, o_c, h_a2, None, p, layer, Relation::CustomerAgent)?;
        Ok((h_a2, h_d2, h_c2))
    }
}

/// Ablation layer: one self-attention over all rows stacked as
/// `[agents; depots; customers]`.
#[derive(Clone, Debug)]
pub struct MergedLayer {
    pub block: Block,
}

impl MergedLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, dims: Dims, rng: &mut R) -> Self {
        Self {
            block: Block::new(store, &format!("{prefix}.self"), dims, false, false, 1, rng),
        }
    }

    /// `groups` are the row counts of agents, depots (0 for single depot)
    /// and customers in `x`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        heads: usize,
        x: Var,
        groups: [usize; 3],
        probe: Option<&mut AttentionProbe>,
        layer: usize,
    ) -> Result<Var> {
        let Some(p) = probe else {
            return self.block.forward(g, store, heads, x, x, None, None);
        };
        let mut rec = Vec::new();
        let out = self.block.forward(g, store, heads, x, x, None, Some(&mut rec))?;
        let [m, d, n] = groups;
        let (a, dp, c) = ((0, m), (m, m + d), (m + d, m + d + n));
        let mut blocks = vec![
            (Relation::AgentAgent, a, a),
            (Relation::AgentCustomer, a, c),
            (Relation::CustomerAgent, c, a),
            (Relation::CustomerCustomer, c, c),
        ];
        if d > 0 {
            blocks.extend([
                (Relation::AgentDepot, a, dp),
                (Relation::DepotAgent, dp, a),
                (Relation::DepotCustomer, dp, c),
                (Relation::CustomerDepot, c, dp),
            ]);
        }
        for (rel, r, k) in blocks {
            p.push(layer, rel, rec.iter().map(|h| h.block(r.0, r.1, k.0, k.1)).collect());
        }
        Ok(out)
    }
}
