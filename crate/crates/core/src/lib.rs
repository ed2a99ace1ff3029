//! Settlement placement benchmark: a turn-based map simulation, a rule
//! knowledge base tuned by Monte Carlo reinforcement learning, and a small
//! neural network baseline trained on logged city outcomes.

pub mod cli;
pub mod engine;
pub mod error;
pub mod features;
pub mod harness;
pub mod mlp;
pub mod rulekb;
pub mod rl;
pub mod seed;
pub mod world;

pub use error::{Error, Result};
