//! Lifelong learning for constructive neural routing solvers with
//! behavior consolidation.
//!
//! The crate covers the whole pipeline: task generators and benchmark
//! parsers ([`tasks`]), the routing MDP ([`env`]), a small attention policy
//! with its own reverse-mode differentiation ([`autodiff`], [`policy`]), the
//! REINFORCE objective ([`drl`]), replay with confidence-aware weighting and
//! divergence-based consolidation ([`consolidation`]), the lifelong training
//! loop with its baselines ([`lifelong`]), the lifelong metrics
//! ([`metrics`]), benchmark evaluation ([`bench`]) and the experiment runner
//! ([`experiment`], [`report`]).

pub mod autodiff;
pub mod bench;
pub mod consolidation;
pub mod drl;
pub mod env;
pub mod error;
pub mod experiment;
pub mod io;
pub mod lifelong;
pub mod metrics;
pub mod policy;
pub mod profile;
pub mod report;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
