//! Attention-based constructive policy.
//!
//! A transformer-style encoder embeds every node once per instance; a light
//! decoder scores all actions for a batch of construction states against
//! those embeddings.

mod model;
mod optim;
mod params;
mod rollout;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use model::{decode, encode, Encoded, Forward};
pub use optim::Adam;
pub use params::{ArchConfig, ParamEntry, PolicyParams, FORMAT_VERSION};
pub use rollout::{best_of_starts, evaluate_set, rollout, DecodeMode};
pub(crate) use rollout::{rollout_on_tape, Keep};

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// A masked probability distribution over actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Behavior {
    pub probs: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Behavior {
    /// Builds a behavior from one row of masked log-probabilities.
    pub fn from_log_probs(logp: &[f64], mask: &[bool]) -> Self {
        let probs = logp
            .iter()
            .zip(mask)
            .map(|(&l, &m)| if m { l.exp() } else { 0.0 })
            .collect();
        Self {
            probs,
            mask: mask.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != self.mask.len() {
            return Err(Error::Shape("behavior probs and mask lengths differ".into()));
        }
        let mut sum = 0.0;
        for (&p, &m) in self.probs.iter().zip(&self.mask) {
            if m && !(p > 0.0 && p.is_finite()) {
                return Err(Error::contract("unmasked action without positive probability"));
            }
            if !m && p != 0.0 {
                return Err(Error::contract("masked action with nonzero probability"));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("probabilities sum to {sum}")));
        }
        Ok(())
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        let mut bp = f64::NEG_INFINITY;
        for (i, (&p, &m)) in self.probs.iter().zip(&self.mask).enumerate() {
            if m && p > bp {
                bp = p;
                best = i;
            }
        }
        best
    }
}
