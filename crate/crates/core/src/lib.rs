//! Interpretable exploration for K-armed and linear bandits.
//!
//! The crate provides the CODE policy, five baselines, the environments they
//! run against, the interpretability metric and an experiment harness that
//! writes per-run and aggregated results.

pub mod data;
pub mod design;
pub mod envs;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod policies;

pub use error::{Error, Result};

/// Random stream used everywhere in the crate.
pub type BanditRng = rand_chacha::ChaCha8Rng;
