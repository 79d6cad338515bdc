//! Simulator and analysis toolkit for fully decentralized multi-armed
//! bandits on undirected graphs.
//!
//! Agents run decentralized KL-UCB or UCB1 (or their single-agent
//! baselines), fusing arm-mean estimates with Metropolis-weighted consensus
//! and tracking the network-wide maximum pull counts.

pub mod agent;
pub mod analysis;
pub mod checks;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod graph;
pub mod klcore;
pub mod oracle;
pub mod rewards;
pub mod seed;

pub use error::{Error, Result};
