//! Model-weighting strategies and node-dropping policies.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Histogram, NodeDataset};
use crate::error::{Error, Result};

/// How the server weighs each node's local model when averaging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingStrategy {
    Uniform,
    NumSamples,
    #[default]
    NumClasses,
    Entropy,
}

impl WeightingStrategy {
    pub const ALL: [WeightingStrategy; 4] = [
        WeightingStrategy::Uniform,
        WeightingStrategy::NumSamples,
        WeightingStrategy::NumClasses,
        WeightingStrategy::Entropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeightingStrategy::Uniform => "uniform",
            WeightingStrategy::NumSamples => "num_samples",
            WeightingStrategy::NumClasses => "num_classes",
            WeightingStrategy::Entropy => "entropy",
        }
    }

    /// Unnormalized score of one node.
    pub fn raw_score(self, stats: &NodeStats) -> f64 {
        match self {
            WeightingStrategy::Uniform => 1.0,
            WeightingStrategy::NumSamples => stats.sample_count as f64,
            WeightingStrategy::NumClasses => stats.class_count as f64,
            WeightingStrategy::Entropy => stats.entropy_bits,
        }
    }
}

impl FromStr for WeightingStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| unknown_name(s, Self::ALL.map(Self::as_str)))
    }
}

fn unknown_name<const N: usize>(s: &str, allowed: [&str; N]) -> String {
    format!(
        "unknown value `{s}`, expected one of: {}",
        allowed.join(", ")
    )
}

impl fmt::Display for WeightingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropKind {
    None,
    /// Largest cumulative local time first.
    Slowest,
    /// Smallest aggregation weight first.
    #[default]
    LowestWeight,
}

impl DropKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DropKind::None => "none",
            DropKind::Slowest => "slowest",
            DropKind::LowestWeight => "lowest_weight",
        }
    }
}

impl FromStr for DropKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let all = [DropKind::None, DropKind::Slowest, DropKind::LowestWeight];
        all.into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| unknown_name(s, all.map(Self::as_str)))
    }
}

impl fmt::Display for DropKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which nodes to exclude, how many, and after which iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropPolicy {
    pub policy: DropKind,
    pub count: usize,
    pub after_iteration: usize,
}

impl Default for DropPolicy {
    fn default() -> Self {
        DropPolicy {
            policy: DropKind::LowestWeight,
            count: 5,
            after_iteration: 5,
        }
    }
}

impl DropPolicy {
    pub fn validate(&self, nodes: usize) -> Result<()> {
        if self.policy == DropKind::None {
            return Ok(());
        }
        if self.after_iteration == 0 {
            return Err(Error::config("drop.after_iteration", "must be positive"));
        }
        if self.count >= nodes {
            return Err(Error::config(
                "drop.count",
                format!("cannot drop {} of {nodes} nodes", self.count),
            ));
        }
        Ok(())
    }

    /// True when nodes are actually removed at the boundary.
    pub fn is_active(&self) -> bool {
        self.policy != DropKind::None && self.count > 0
    }
}

/// Per-node quantities the strategies and policies read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub node_id: usize,
    pub sample_count: usize,
    pub class_count: usize,
    pub entropy_bits: f64,
    pub last_round_time: f64,
    pub cumulative_time: f64,
}

impl NodeStats {
    pub fn from_node(node: &NodeDataset) -> Result<Self> {
        Ok(NodeStats {
            node_id: node.node_id,
            sample_count: node.sample_count(),
            class_count: node.class_count(),
            entropy_bits: shannon_entropy(&node.label_histogram)?,
            last_round_time: 0.0,
            cumulative_time: 0.0,
        })
    }
}

/// Shannon entropy of a class histogram, in bits.
pub fn shannon_entropy(histogram: &Histogram) -> Result<f64> {
    shannon_entropy_base(histogram, 2.0)
}

/// Shannon entropy of a class histogram with logarithms in `base`.
pub fn shannon_entropy_base(histogram: &[usize], base: f64) -> Result<f64> {
    let total: usize = histogram.iter().sum();
    if total == 0 {
        return Err(Error::Domain("entropy of an empty histogram".into()));
    }
    let total = total as f64;
    let h = -histogram
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / total;
            p * p.log(base)
        })
        .sum::<f64>();
    // a single-class histogram yields -0.0
    Ok(h.max(0.0))
}

/// Normalized aggregation weights, one per entry of `stats`, in the same order.
pub fn compute_weights(strategy: WeightingStrategy, stats: &[NodeStats]) -> Result<Vec<f64>> {
    if stats.is_empty() {
        return Err(Error::Domain("no active nodes to weight".into()));
    }
    let raw: Vec<f64> = stats.iter().map(|s| strategy.raw_score(s)).collect();
    if let Some(bad) = raw.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::Domain(format!("raw score {bad} under `{strategy}`")));
    }
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(Error::DegenerateWeights {
            strategy: strategy.as_str(),
        });
    }
    Ok(raw.into_iter().map(|r| r / sum).collect())
}

/// Node ids to remove at the drop boundary. Ties go to the smaller node id.
pub fn select_drops(
    policy: &DropPolicy,
    stats: &[NodeStats],
    weights: &[f64],
) -> Result<BTreeSet<usize>> {
    if policy.policy == DropKind::None {
        return Ok(BTreeSet::new());
    }
    if weights.len() != stats.len() {
        return Err(Error::Usage(format!(
            "{} weights for {} nodes",
            weights.len(),
            stats.len()
        )));
    }
    if policy.count >= stats.len() {
        return Err(Error::config(
            "drop.count",
            format!(
                "cannot drop {} of {} active nodes",
                policy.count,
                stats.len()
            ),
        ));
    }
    let mut order: Vec<usize> = (0..stats.len()).collect();
    match policy.policy {
        DropKind::Slowest => order.sort_by(|&a, &b| {
            stats[b]
                .cumulative_time
                .total_cmp(&stats[a].cumulative_time)
                .then(stats[a].node_id.cmp(&stats[b].node_id))
        }),
        DropKind::LowestWeight => order.sort_by(|&a, &b| {
            weights[a]
                .total_cmp(&weights[b])
                .then(stats[a].node_id.cmp(&stats[b].node_id))
        }),
        DropKind::None => unreachable!(),
    }
    Ok(order
        .into_iter()
        .take(policy.count)
        .map(|i| stats[i].node_id)
        .collect())
}
