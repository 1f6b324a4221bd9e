//! Deterministic simulator of synchronous federated learning over
//! heterogeneous nodes.
//!
//! Nodes hold Fashion-MNIST shards that differ in size and class coverage.
//! Each round they train a small dense classifier locally; the server
//! averages the results with per-node weights chosen by a
//! [`WeightingStrategy`] and may permanently drop nodes under a
//! [`DropPolicy`]. Simulated time comes from a cost model, so runs are
//! reproducible bit for bit.

pub mod chart;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod output;
pub mod rng;
pub mod sim;
pub mod strategies;

pub use error::{Error, Result};
pub use sim::{
    run, run_observed, run_with, Execution, Federation, RoundRecord, RunConfig, RunOutput,
};
pub use strategies::{DropKind, DropPolicy, WeightingStrategy};
