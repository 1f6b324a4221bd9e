//! Accuracy, weight/gain correlation, and run summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Category, Dataset};
use crate::error::{Error, Result};
use crate::nn::{predict, Activation, ModelParams};
use crate::sim::{RoundRecord, RunConfig};

/// Below this variance a correlation is reported as degenerate.
pub const DEGENERATE_VARIANCE: f64 = 1e-15;

/// Fraction of samples whose arg-max prediction equals the label.
pub fn accuracy(params: &ModelParams<f32>, dataset: &Dataset, act: Activation) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Usage("accuracy of an empty dataset".into()));
    }
    let predictions = predict(params, dataset.images().view(), act)?;
    let correct = predictions
        .iter()
        .zip(dataset.labels())
        .filter(|(&p, &l)| p == l as usize)
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// A correlation coefficient, or a marker that one side had no variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    Defined(f64),
    Degenerate,
}

impl Correlation {
    /// Degenerate correlations read as 0.
    pub fn value(self) -> f64 {
        match self {
            Correlation::Defined(r) => r,
            Correlation::Degenerate => 0.0,
        }
    }

    pub fn is_degenerate(self) -> bool {
        matches!(self, Correlation::Degenerate)
    }
}

#[derive(Serialize, Deserialize)]
struct CorrelationRepr {
    value: f64,
    degenerate: bool,
}

impl Serialize for Correlation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        CorrelationRepr {
            value: self.value(),
            degenerate: self.is_degenerate(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Correlation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = CorrelationRepr::deserialize(d)?;
        Ok(if r.degenerate {
            Correlation::Degenerate
        } else {
            Correlation::Defined(r.value)
        })
    }
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(Error::Usage(format!(
            "pearson: {} xs but {} ys",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Usage("pearson needs at least two pairs".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx / n < DEGENERATE_VARIANCE || syy / n < DEGENERATE_VARIANCE {
        return Ok(Correlation::Degenerate);
    }
    Ok(Correlation::Defined(
        (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
    ))
}

/// Per-node averages over the rounds a node was active in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMeans {
    pub node_id: usize,
    pub category: Category,
    pub rounds: usize,
    pub mean_weight: f64,
    pub mean_gain: f64,
    pub mean_local_time: f64,
}

/// Averages per node over records with `iteration >= from_iteration`.
pub fn node_means(records: &[RoundRecord], from_iteration: usize) -> Vec<NodeMeans> {
    let mut acc: BTreeMap<usize, NodeMeans> = BTreeMap::new();
    for rec in records.iter().filter(|r| r.iteration >= from_iteration) {
        for n in &rec.nodes {
            let e = acc.entry(n.node_id).or_insert(NodeMeans {
                node_id: n.node_id,
                category: n.category,
                rounds: 0,
                mean_weight: 0.0,
                mean_gain: 0.0,
                mean_local_time: 0.0,
            });
            e.rounds += 1;
            e.mean_weight += n.weight;
            e.mean_gain += n.gain;
            e.mean_local_time += n.local_time;
        }
    }
    acc.into_values()
        .map(|mut m| {
            let k = m.rounds as f64;
            m.mean_weight /= k;
            m.mean_gain /= k;
            m.mean_local_time /= k;
            m
        })
        .collect()
}

/// First iteration included in gain pooling; iteration 1 is warm-up.
pub const POOL_FROM_ITERATION: usize = 2;

/// Pearson correlation between each node's weight and its mean local gain,
/// pooled over rounds 2 onward.
pub fn weight_gain_correlation(records: &[RoundRecord]) -> Result<Correlation> {
    if records.len() < 2 {
        return Err(Error::Usage(format!(
            "weight/gain correlation needs at least 2 rounds, got {}",
            records.len()
        )));
    }
    let means = node_means(records, POOL_FROM_ITERATION);
    let weights: Vec<f64> = means.iter().map(|m| m.mean_weight).collect();
    let gains: Vec<f64> = means.iter().map(|m| m.mean_gain).collect();
    pearson(&weights, &gains)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMeans {
    pub category: Category,
    pub nodes: usize,
    pub mean_weight: f64,
    pub mean_gain: f64,
    pub mean_local_time: f64,
}

/// Everything written to `summary.json`. The embedded config reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub final_global_accuracy: f64,
    pub correlation: Option<Correlation>,
    pub categories: Vec<CategoryMeans>,
    pub nodes: Vec<NodeMeans>,
    pub records: Vec<RoundRecord>,
}

impl RunSummary {
    pub fn new(config: &RunConfig, records: &[RoundRecord]) -> Result<Self> {
        let nodes = node_means(records, POOL_FROM_ITERATION.min(records.len()));
        let mut by_cat: BTreeMap<Category, Vec<&NodeMeans>> = BTreeMap::new();
        for m in &nodes {
            by_cat.entry(m.category).or_default().push(m);
        }
        let categories = by_cat
            .into_iter()
            .map(|(category, ms)| {
                let k = ms.len() as f64;
                CategoryMeans {
                    category,
                    nodes: ms.len(),
                    mean_weight: ms.iter().map(|m| m.mean_weight).sum::<f64>() / k,
                    mean_gain: ms.iter().map(|m| m.mean_gain).sum::<f64>() / k,
                    mean_local_time: ms.iter().map(|m| m.mean_local_time).sum::<f64>() / k,
                }
            })
            .collect();
        let correlation = if records.len() >= 2 {
            Some(weight_gain_correlation(records)?)
        } else {
            None
        };
        Ok(RunSummary {
            config: config.clone(),
            final_global_accuracy: records.last().map_or(0.0, |r| r.global_accuracy),
            correlation,
            categories,
            nodes,
            records: records.to_vec(),
        })
    }
}
