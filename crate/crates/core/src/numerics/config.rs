use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How `batch_size` is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchUnit {
    /// `batch_size` bags per optimizer step.
    #[default]
    Bags,
    /// Bags are added until the batch holds at least `batch_size` sentences.
    Sentences,
}

/// Training hyperparameters. Defaults are the published settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub batch_unit: BatchUnit,
    pub dropout: f64,
    /// L2 coefficient β.
    pub l2: f64,
    pub lambda_head: f64,
    pub lambda_tail: f64,
    /// Weight of the entity objective in the joint mode.
    pub lambda: f64,
    /// GRU size m.
    pub hidden: usize,
    /// Word embedding size k.
    pub word_dim: usize,
    /// Position embedding size l.
    pub pos_dim: usize,
    /// Relative positions are clipped to `[-clip, clip]`.
    pub clip: usize,
    pub epochs: usize,
    pub seed: u64,
    pub freeze_word_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 50,
            batch_unit: BatchUnit::Bags,
            dropout: 0.5,
            l2: 0.0001,
            lambda_head: 0.5,
            lambda_tail: 0.5,
            lambda: 0.3,
            hidden: 230,
            word_dim: 50,
            pos_dim: 5,
            clip: 30,
            epochs: 10,
            seed: 1,
            freeze_word_embeddings: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.dropout > 0.0 && self.dropout < 1.0) {
            return fail("dropout probability must lie in (0, 1)");
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return fail("l2 coefficient must be non-negative");
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return fail("lambda must lie in (0, 1)");
        }
        if !(self.lambda_head >= 0.0 && self.lambda_tail >= 0.0) {
            return fail("task weights must be non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("learning rate must be positive");
        }
        if self.batch_size == 0 || self.hidden == 0 || self.word_dim == 0 || self.pos_dim == 0 {
            return fail("batch size and layer sizes must be positive");
        }
        Ok(())
    }
}
