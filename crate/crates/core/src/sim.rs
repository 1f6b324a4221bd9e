//! Synchronous federated rounds: local training, synthetic timing, weighted
//! averaging, broadcast, and one-shot node dropping.
//!
//! A round trains every active node from the current global parameters. With
//! the `parallel` feature, nodes train concurrently on the rayon pool. Each
//! node's shuffle and jitter streams are derived from `(seed, node, round)`,
//! and updates are aggregated in node-id order, so records are identical for
//! any thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, Category, Dataset, Histogram, NodeDataset, PartitionSpec, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::metrics::accuracy;
use crate::nn::{self, Batch, ModelParams, TrainSpec};
use crate::rng::{derive_seed, node_round_seed, seeded_rng, Stream};
use crate::strategies::{compute_weights, select_drops, DropPolicy, NodeStats, WeightingStrategy};

/// Synthetic per-node compute time.
///
/// `local_time = (fixed_overhead + cost · samples · epochs) · (1 + jitter_fraction · u)`
/// with `u` uniform in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingModel {
    /// Seconds per sample per epoch.
    pub per_sample_cost: f64,
    /// Per-category overrides of `per_sample_cost`.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub category_cost: BTreeMap<Category, f64>,
    /// Seconds per node per round, communication included.
    pub fixed_overhead: f64,
    pub jitter_fraction: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        TimingModel {
            per_sample_cost: 1e-3,
            category_cost: BTreeMap::new(),
            fixed_overhead: 0.05,
            jitter_fraction: 0.05,
        }
    }
}

impl TimingModel {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |key: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(
                    key,
                    format!("must be finite and nonnegative, got {v}"),
                ))
            }
        };
        nonneg("timing.per_sample_cost", self.per_sample_cost)?;
        nonneg("timing.fixed_overhead", self.fixed_overhead)?;
        for (cat, &c) in &self.category_cost {
            nonneg(&format!("timing.category_cost.{cat}"), c)?;
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return Err(Error::config(
                "timing.jitter_fraction",
                format!("must be in [0, 1), got {}", self.jitter_fraction),
            ));
        }
        Ok(())
    }

    pub fn cost_for(&self, category: Category) -> f64 {
        self.category_cost
            .get(&category)
            .copied()
            .unwrap_or(self.per_sample_cost)
    }

    /// Jitter-free local time of a node.
    pub fn base_time(&self, category: Category, samples: usize, epochs: usize) -> f64 {
        self.fixed_overhead + self.cost_for(category) * (samples * epochs) as f64
    }

    /// Multiplier in `[1 - j, 1 + j]` drawn from `seed`.
    pub fn jitter(&self, seed: u64) -> f64 {
        if self.jitter_fraction == 0.0 {
            return 1.0;
        }
        let u: f64 = seeded_rng(seed).random_range(-1.0..=1.0);
        1.0 + self.jitter_fraction * u
    }
}

/// Classifier architecture: input width and hidden widths; a softmax output is appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub layer_sizes: Vec<usize>,
    pub output_size: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            layer_sizes: vec![28 * 28, 200, 100, 200],
            output_size: NUM_CLASSES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: PathBuf::from("data/fashion-mnist"),
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Complete description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub rounds: usize,
    pub strategy: WeightingStrategy,
    pub drop: DropPolicy,
    pub partition: PartitionSpec,
    pub train: TrainSpec,
    pub timing: TimingModel,
    pub model: ModelSpec,
    /// Size of the stratified test subset used for per-node accuracy.
    pub eval_subset_size: usize,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            rounds: 30,
            strategy: WeightingStrategy::default(),
            drop: DropPolicy::default(),
            partition: PartitionSpec::default(),
            train: TrainSpec::default(),
            timing: TimingModel::default(),
            model: ModelSpec::default(),
            eval_subset_size: 1000,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        self.train.validate()?;
        self.timing.validate()?;
        self.drop.validate(self.partition.node_count())?;
        if self.partition.node_count() == 0 {
            return Err(Error::config("partition.categories", "no nodes configured"));
        }
        if self.eval_subset_size == 0 {
            return Err(Error::config("eval_subset_size", "must be positive"));
        }
        if self.model.layer_sizes.is_empty() || self.model.layer_sizes.contains(&0) {
            return Err(Error::config(
                "model.layer_sizes",
                "must be non-empty and positive",
            ));
        }
        if self.model.output_size != NUM_CLASSES {
            return Err(Error::config(
                "model.output_size",
                format!("must equal the class count {NUM_CLASSES}"),
            ));
        }
        Ok(())
    }

    pub fn partition_seed(&self) -> u64 {
        self.partition
            .seed
            .unwrap_or_else(|| derive_seed(self.seed, &[Stream::Partition as u64]))
    }
}

/// How per-node work inside a round is scheduled. Results do not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon thread pool; same as `Sequential` without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

fn map_ordered<T, F>(exec: Execution, ids: &[usize], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return ids.par_iter().map(|&i| f(i)).collect();
    }
    let _ = exec;
    ids.iter().map(|&i| f(i)).collect()
}

/// A learning node: its partition entry and a copy of its samples.
#[derive(Debug, Clone)]
pub struct Node {
    pub dataset: NodeDataset,
    pub samples: Dataset,
    pub entropy_bits: f64,
}

impl Node {
    pub fn id(&self) -> usize {
        self.dataset.node_id
    }

    pub fn category(&self) -> Category {
        self.dataset.category
    }
}

/// Immutable inputs shared by every round: node datasets and evaluation sets.
#[derive(Debug, Clone)]
pub struct Federation {
    pub nodes: Vec<Node>,
    /// Stratified subset of the test set for per-node accuracy.
    pub eval: Dataset,
    /// Full test set for global accuracy.
    pub test: Dataset,
}

impl Federation {
    pub fn new(config: &RunConfig, train: &Dataset, test: &Dataset) -> Result<Self> {
        config.validate()?;
        if train.dim() != config.model.layer_sizes[0] {
            return Err(Error::config(
                "model.layer_sizes",
                format!(
                    "first size {} does not match input width {}",
                    config.model.layer_sizes[0],
                    train.dim()
                ),
            ));
        }
        let parts = data::partition(train, &config.partition, config.partition_seed())?;
        let nodes = parts
            .into_iter()
            .map(|p| {
                Ok(Node {
                    samples: train.select(&p.indices),
                    entropy_bits: crate::strategies::shannon_entropy(&p.label_histogram)?,
                    dataset: p,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let eval_idx = data::stratified_subset(
            test,
            config.eval_subset_size,
            derive_seed(config.seed, &[Stream::EvalSubset as u64]),
        )
        .map_err(|e| match e {
            Error::Capacity { .. } => Error::config("eval_subset_size", e.to_string()),
            e => e,
        })?;
        Ok(Federation {
            nodes,
            eval: test.select(&eval_idx),
            test: test.clone(),
        })
    }

    /// Loads the IDX files under `config.paths.data_dir` and partitions them.
    pub fn load(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = data::load_fashion_mnist(&config.paths.data_dir)?;
        Federation::new(config, &train, &test)
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }
}

/// Output of one node's local phase.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub node_id: usize,
    pub params: ModelParams<f32>,
    pub sample_count: usize,
    pub histogram: Histogram,
    pub local_time: f64,
    pub acc_before: f64,
    pub acc_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: usize,
    pub category: Category,
    pub weight: f64,
    pub local_time: f64,
    pub acc_before: f64,
    pub acc_after: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub iteration: usize,
    /// Cumulative simulated seconds at the end of this round.
    pub elapsed_time: f64,
    pub global_accuracy: f64,
    pub slowest_node: usize,
    pub slowest_category: Category,
    pub active_nodes: Vec<usize>,
    /// One entry per active node, in node-id order.
    pub nodes: Vec<NodeRecord>,
}

/// Mutable simulation state between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub global: ModelParams<f32>,
    /// Sorted ids of nodes still participating.
    pub active: Vec<usize>,
    pub elapsed: f64,
    /// Completed rounds.
    pub iteration: usize,
    pub last_round_time: Vec<f64>,
    pub cumulative_time: Vec<f64>,
}

impl SimState {
    pub fn initial(config: &RunConfig, federation: &Federation) -> Result<Self> {
        let n = federation.nodes.len();
        Ok(SimState {
            global: nn::init_params(
                &config.model.layer_sizes,
                config.model.output_size,
                derive_seed(config.seed, &[Stream::Init as u64]),
            )?,
            active: (0..n).collect(),
            elapsed: 0.0,
            iteration: 0,
            last_round_time: vec![0.0; n],
            cumulative_time: vec![0.0; n],
        })
    }

    pub fn node_stats(&self, federation: &Federation) -> Vec<NodeStats> {
        self.active
            .iter()
            .map(|&id| {
                let node = federation.node(id);
                NodeStats {
                    node_id: id,
                    sample_count: node.dataset.sample_count(),
                    class_count: node.dataset.class_count(),
                    entropy_bits: node.entropy_bits,
                    last_round_time: self.last_round_time[id],
                    cumulative_time: self.cumulative_time[id],
                }
            })
            .collect()
    }
}

/// Coordinate-wise `Σ wᵢ θᵢ`, accumulated in f64 in update order.
pub fn aggregate(updates: &[LocalUpdate], weights: &[f64]) -> Result<ModelParams<f32>> {
    let params: Vec<&ModelParams<f32>> = updates.iter().map(|u| &u.params).collect();
    aggregate_params(&params, weights)
}

/// [`aggregate`] over bare parameter sets.
pub fn aggregate_params(params: &[&ModelParams<f32>], weights: &[f64]) -> Result<ModelParams<f32>> {
    let first = params
        .first()
        .ok_or_else(|| Error::Aggregation("no updates".into()))?;
    if weights.len() != params.len() {
        return Err(Error::Aggregation(format!(
            "{} weights for {} updates",
            weights.len(),
            params.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Aggregation(format!("invalid weights {weights:?}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Aggregation(format!("weights sum to {total}, not 1")));
    }
    if let Some(k) = params.iter().position(|p| !p.is_congruent(first)) {
        return Err(Error::Aggregation(format!(
            "update {k} has layer sizes {:?}, expected {:?}",
            params[k].layer_sizes(),
            first.layer_sizes()
        )));
    }
    let mut acc = vec![0.0f64; first.num_params()];
    for (p, &w) in params.iter().zip(weights) {
        for (a, x) in acc.iter_mut().zip(p.iter()) {
            *a += w * x as f64;
        }
    }
    let mut out = first.zeros_like();
    for (dst, a) in out.iter_mut().zip(acc) {
        *dst = a as f32;
    }
    Ok(out)
}

fn local_phase(
    node: &Node,
    state: &SimState,
    config: &RunConfig,
    federation: &Federation,
    round: usize,
    acc_before: f64,
) -> Result<LocalUpdate> {
    let id = node.id();
    let batch = Batch::new(node.samples.images().view(), node.samples.labels())?;
    let seed = node_round_seed(config.seed, Stream::Shuffle, id, round);
    let params =
        nn::train_local(&state.global, &batch, &config.train, seed).map_err(|e| match e {
            Error::NonFinite(message) => Error::Numerical {
                round,
                node: id,
                message,
            },
            e => e,
        })?;
    let base = config.timing.base_time(
        node.category(),
        node.dataset.sample_count(),
        config.train.local_epochs,
    );
    let jitter = config
        .timing
        .jitter(node_round_seed(config.seed, Stream::Jitter, id, round));
    let acc_after = accuracy(&params, &federation.eval, config.train.hidden_activation)?;
    Ok(LocalUpdate {
        node_id: id,
        sample_count: node.dataset.sample_count(),
        histogram: node.dataset.label_histogram,
        local_time: base * jitter,
        acc_before,
        acc_after,
        params,
    })
}

/// Runs one synchronous round over the active nodes.
pub fn simulate_round(
    state: &SimState,
    federation: &Federation,
    config: &RunConfig,
    exec: Execution,
) -> Result<(SimState, RoundRecord)> {
    let round = state.iteration + 1;
    let wrap = |e: Error| e.in_round(round);
    if state.active.is_empty() {
        return Err(wrap(Error::Usage("no active nodes".into())));
    }
    let act = config.train.hidden_activation;
    let acc_before = accuracy(&state.global, &federation.eval, act).map_err(wrap)?;

    let updates = map_ordered(exec, &state.active, |id| {
        local_phase(
            federation.node(id),
            state,
            config,
            federation,
            round,
            acc_before,
        )
    })
    .map_err(wrap)?;

    let weights = compute_weights(config.strategy, &state.node_stats(federation)).map_err(wrap)?;
    let global = aggregate(&updates, &weights).map_err(wrap)?;
    let global_accuracy = accuracy(&global, &federation.test, act).map_err(wrap)?;

    // ties go to the smaller node id
    let slowest = updates.iter().fold(&updates[0], |best, u| {
        if u.local_time > best.local_time {
            u
        } else {
            best
        }
    });
    let duration = slowest.local_time;

    let mut next = SimState {
        global,
        active: state.active.clone(),
        elapsed: state.elapsed + duration,
        iteration: round,
        last_round_time: state.last_round_time.clone(),
        cumulative_time: state.cumulative_time.clone(),
    };
    for u in &updates {
        next.last_round_time[u.node_id] = u.local_time;
        next.cumulative_time[u.node_id] += u.local_time;
    }

    let record = RoundRecord {
        iteration: round,
        elapsed_time: next.elapsed,
        global_accuracy,
        slowest_node: slowest.node_id,
        slowest_category: federation.node(slowest.node_id).category(),
        active_nodes: state.active.clone(),
        nodes: updates
            .iter()
            .zip(&weights)
            .map(|(u, &w)| NodeRecord {
                node_id: u.node_id,
                category: federation.node(u.node_id).category(),
                weight: w,
                local_time: u.local_time,
                acc_before: u.acc_before,
                acc_after: u.acc_after,
                gain: u.acc_after - u.acc_before,
            })
            .collect(),
    };
    Ok((next, record))
}

/// Removes the nodes chosen by the drop policy from `state.active`.
pub fn apply_drops(
    state: &mut SimState,
    federation: &Federation,
    config: &RunConfig,
) -> Result<BTreeSet<usize>> {
    let stats = state.node_stats(federation);
    let weights = compute_weights(config.strategy, &stats)?;
    let dropped = select_drops(&config.drop, &stats, &weights)?;
    state.active.retain(|id| !dropped.contains(id));
    Ok(dropped)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub final_params: ModelParams<f32>,
}

/// Runs `config.rounds` rounds on a prepared federation.
pub fn run_with(config: &RunConfig, federation: &Federation, exec: Execution) -> Result<RunOutput> {
    run_observed(config, federation, exec, |_| {})
}

/// [`run_with`], calling `on_round` after each completed round.
pub fn run_observed(
    config: &RunConfig,
    federation: &Federation,
    exec: Execution,
    mut on_round: impl FnMut(&RoundRecord),
) -> Result<RunOutput> {
    config.validate()?;
    let mut state = SimState::initial(config, federation)?;
    let mut records = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let (mut next, record) = simulate_round(&state, federation, config, exec)?;
        if config.drop.is_active() && next.iteration == config.drop.after_iteration {
            let round = next.iteration;
            apply_drops(&mut next, federation, config).map_err(|e| e.in_round(round))?;
        }
        on_round(&record);
        records.push(record);
        state = next;
    }
    Ok(RunOutput {
        records,
        final_params: state.global,
    })
}

/// Loads the data named in `config` and runs the experiment.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let federation = Federation::load(config)?;
    run_with(config, &federation, Execution::default())
}
