use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ProblemKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeKind {
    /// Depot-aware rotation of a projected depot embedding.
    Rotation,
    /// Fixed sinusoidal table.
    Sinusoidal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Separate navigation and partition parts per layer.
    PartitionNavigation,
    /// Plain self-attention over the concatenated agent/depot/customer rows.
    Merged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ProblemKind,
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub pe: PeKind,
    /// Disabling drops the customer self-attention part of every layer.
    pub navigation: bool,
    pub encoder: EncoderKind,
}

impl ModelConfig {
    /// Full-size setting: 6 layers, d=128, 8 heads, hidden 512.
    pub fn full(kind: ProblemKind) -> Self {
        Self {
            kind,
            layers: 6,
            dim: 128,
            heads: 8,
            ff_hidden: 512,
            pe: PeKind::Rotation,
            navigation: true,
            encoder: EncoderKind::PartitionNavigation,
        }
    }

    /// Small setting that trains on a laptop CPU.
    pub fn desk(kind: ProblemKind) -> Self {
        Self {
            kind,
            layers: 2,
            dim: 32,
            heads: 4,
            ff_hidden: 64,
            ..Self::full(kind)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn check(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.ff_hidden == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "heads ({}) must divide dim ({})",
                self.heads, self.dim
            )));
        }
        if !self.dim.is_multiple_of(2) {
            return Err(Error::Config(format!("dim must be even, got {}", self.dim)));
        }
        Ok(())
    }
}
