//! Attention score capture for inspecting what each block attends to.

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

fn rows_of<T: Real>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|r| t.row(r).iter().map(|v| v.to_f()).collect())
        .collect()
}

/// Scores of one attention head: pre-softmax logits (after the temperature,
/// if any) and the normalized weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadScores {
    pub head: usize,
    pub raw: Vec<Vec<f64>>,
    pub softmax: Vec<Vec<f64>>,
}

impl HeadScores {
    pub fn new<T: Real>(head: usize, raw: &Tensor<T>, softmax: &Tensor<T>) -> Self {
        Self {
            head,
            raw: rows_of(raw),
            softmax: rows_of(softmax),
        }
    }

    /// Rows `r0..r1`, columns `c0..c1` of both matrices. The softmax block is
    /// taken as-is (not renormalized).
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Self {
        let cut = |m: &Vec<Vec<f64>>| m[r0..r1].iter().map(|row| row[c0..c1].to_vec()).collect();
        Self {
            head: self.head,
            raw: cut(&self.raw),
            softmax: cut(&self.softmax),
        }
    }
}

/// Relation captured by a block, named `query-key`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    AgentAgent,
    AgentCustomer,
    CustomerAgent,
    CustomerCustomer,
    DepotCustomer,
    CustomerDepot,
    AgentDepot,
    DepotAgent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeBlock {
    pub layer: usize,
    pub relation: Relation,
    pub heads: Vec<HeadScores>,
}

/// Everything recorded during one encoder pass with probing enabled.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionProbe {
    pub blocks: Vec<ProbeBlock>,
}

impl AttentionProbe {
    pub fn push(&mut self, layer: usize, relation: Relation, heads: Vec<HeadScores>) {
        self.blocks.push(ProbeBlock { layer, relation, heads });
    }

    /// All blocks recorded for `(layer, head)`.
    pub fn scores(&self, layer: usize, head: usize) -> Vec<(Relation, &HeadScores)> {
        self.blocks
            .iter()
            .filter(|b| b.layer == layer)
            .filter_map(|b| b.heads.iter().find(|h| h.head == head).map(|h| (b.relation, h)))
            .collect()
    }

    pub fn relations(&self, layer: usize) -> Vec<Relation> {
        self.blocks.iter().filter(|b| b.layer == layer).map(|b| b.relation).collect()
    }
}

/// Reads the probe of an encoder pass, failing if probing was off.
pub fn attention_probe(probe: Option<&AttentionProbe>, layer: usize, head: usize) -> Result<Vec<(Relation, HeadScores)>> {
    let p = probe.ok_or(Error::ProbeDisabled)?;
    Ok(p.scores(layer, head).into_iter().map(|(r, h)| (r, h.clone())).collect())
}
