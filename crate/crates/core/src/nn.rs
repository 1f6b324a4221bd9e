//! Dense feed-forward classifier trained with mini-batch SGD.
//!
//! Weight matrices are stored `out × in`, so a layer maps a row-major batch
//! `X (n × in)` to `X · Wᵀ + b (n × out)`. The output layer is always a
//! softmax; hidden layers use [`Activation`].
//!
//! Everything is generic over [`Real`] so the same code path runs in `f32`
//! for simulation and in `f64` for finite-difference checks.

use std::fmt::Debug;
use std::ops::AddAssign;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Floating-point types the network can be instantiated with.
pub trait Real:
    LinalgScalar + Float + ScalarOperand + AddAssign + Debug + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// One fully connected layer: `weights` is `out × in`, `bias` has `out` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Dense<F> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Parameters of the whole classifier. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F = f32> {
    layers: Vec<Dense<F>>,
}

/// Gradients share the parameter layout.
pub type Gradient<F> = ModelParams<F>;

impl<F: Real> ModelParams<F> {
    /// Builds parameters from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Dense<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("model needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Shape(format!(
                    "layer {k}: bias has {} entries, weights have {} rows",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if k > 0 && layers[k - 1].out_dim() != layer.in_dim() {
                return Err(Error::Shape(format!(
                    "layer {k} expects {} inputs but layer {} produces {}",
                    layer.in_dim(),
                    k - 1,
                    layers[k - 1].out_dim()
                )));
            }
        }
        Ok(ModelParams { layers })
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<F>] {
        &mut self.layers
    }

    /// Input width followed by every layer's output width.
    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// A zero-valued container congruent with `self`.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim(), l.out_dim()))
                .collect(),
        }
    }

    pub fn is_congruent(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.len() == b.bias.len())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    /// All coordinates in a fixed order: per layer, weights row-major then bias.
    pub fn iter(&self) -> impl Iterator<Item = F> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    /// Mutable access to every coordinate, in the same order as [`iter`](Self::iter).
    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut F> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// `self += alpha * other`.
    pub fn scaled_add(&mut self, alpha: F, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(alpha, &b.weights);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    /// Softmax on every layer, hidden ones included.
    SoftmaxAll,
}

/// Local SGD hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub hidden_activation: Activation,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            learning_rate: 1e-2,
            batch_size: 32,
            local_epochs: 1,
            hidden_activation: Activation::Relu,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "train.learning_rate",
                format!(
                    "must be a finite nonnegative number, got {}",
                    self.learning_rate
                ),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("train.local_epochs", "must be positive"));
        }
        Ok(())
    }
}

/// A labelled batch borrowed from a dataset. Rows of `inputs` are samples.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, F> {
    inputs: ArrayView2<'a, F>,
    labels: &'a [u8],
}

impl<'a, F: Real> Batch<'a, F> {
    pub fn new(inputs: ArrayView2<'a, F>, labels: &'a [u8]) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::Shape("batch is empty".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn inputs(&self) -> ArrayView2<'a, F> {
        self.inputs
    }

    pub fn labels(&self) -> &'a [u8] {
        self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Glorot-uniform weights, zero biases.
///
/// `layer_sizes` starts with the input width; each further entry is a hidden
/// layer. A softmax layer of `output_size` units is appended.
pub fn init_params<F: Real>(
    layer_sizes: &[usize],
    output_size: usize,
    seed: u64,
) -> Result<ModelParams<F>> {
    if layer_sizes.is_empty() || layer_sizes.contains(&0) {
        return Err(Error::config(
            "model.layer_sizes",
            format!("must be non-empty and all positive, got {layer_sizes:?}"),
        ));
    }
    if output_size < 2 {
        return Err(Error::config(
            "model.output_size",
            format!("must be at least 2, got {output_size}"),
        ));
    }
    let mut rng = seeded_rng(seed);
    let dims: Vec<usize> = layer_sizes
        .iter()
        .copied()
        .chain(std::iter::once(output_size))
        .collect();
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                F::from_f64(rng.random_range(-limit..=limit))
            });
            Dense {
                weights,
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    ModelParams::from_layers(layers)
}

fn check_input<F: Real>(params: &ModelParams<F>, inputs: &ArrayView2<F>) -> Result<()> {
    if inputs.ncols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "inputs have {} columns, first layer expects {}",
            inputs.ncols(),
            params.input_dim()
        )));
    }
    Ok(())
}

fn affine<F: Real>(layer: &Dense<F>, x: &ArrayView2<F>) -> Array2<F> {
    let mut z = x.dot(&layer.weights.t());
    z += &layer.bias;
    z
}

/// Row-wise softmax in place; sums accumulate in f64.
fn softmax_rows<F: Real>(z: &mut Array2<F>) {
    for mut row in z.rows_mut() {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let mut sum = 0.0f64;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e.to_f64();
            e
        });
        let inv = F::from_f64(1.0 / sum);
        row.mapv_inplace(|v| v * inv);
    }
}

fn activate_hidden<F: Real>(z: &mut Array2<F>, act: Activation) {
    match act {
        Activation::Relu => z.mapv_inplace(|v| v.max(F::zero())),
        Activation::SoftmaxAll => softmax_rows(z),
    }
}

/// Hidden activations (post-nonlinearity) and the output logits.
fn forward_trace<F: Real>(
    params: &ModelParams<F>,
    inputs: ArrayView2<F>,
    act: Activation,
) -> (Vec<Array2<F>>, Array2<F>) {
    let (last, hidden) = params.layers.split_last().expect("non-empty model");
    let mut acts: Vec<Array2<F>> = Vec::with_capacity(hidden.len());
    for layer in hidden {
        let mut z = match acts.last() {
            Some(a) => affine(layer, &a.view()),
            None => affine(layer, &inputs),
        };
        activate_hidden(&mut z, act);
        acts.push(z);
    }
    let logits = match acts.last() {
        Some(a) => affine(last, &a.view()),
        None => affine(last, &inputs),
    };
    (acts, logits)
}

/// Class probabilities, one row per input.
pub fn forward<F: Real>(
    params: &ModelParams<F>,
    inputs: ArrayView2<F>,
    act: Activation,
) -> Result<Array2<F>> {
    check_input(params, &inputs)?;
    let (_, mut out) = forward_trace(params, inputs, act);
    softmax_rows(&mut out);
    Ok(out)
}

/// Index of the largest probability per row; ties go to the smallest index.
pub fn predict<F: Real>(
    params: &ModelParams<F>,
    inputs: ArrayView2<F>,
    act: Activation,
) -> Result<Vec<usize>> {
    check_input(params, &inputs)?;
    let (_, logits) = forward_trace(params, inputs, act);
    Ok(logits
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, F::neg_infinity()), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect())
}

fn check_labels<F: Real>(params: &ModelParams<F>, batch: &Batch<F>) -> Result<()> {
    let classes = params.output_dim();
    if let Some(&bad) = batch.labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::Shape(format!(
            "label {bad} out of range for {classes} output classes"
        )));
    }
    Ok(())
}

/// Turns logits into probabilities in place and returns the summed
/// cross-entropy of the batch (log-sum-exp form, f64).
fn softmax_cross_entropy<F: Real>(logits: &mut Array2<F>, labels: &[u8]) -> f64 {
    let mut total = 0.0f64;
    for (mut row, &label) in logits.rows_mut().into_iter().zip(labels) {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let target = (row[label as usize] - max).to_f64();
        let mut sum = 0.0f64;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e.to_f64();
            e
        });
        total += sum.ln() - target;
        let inv = F::from_f64(1.0 / sum);
        row.mapv_inplace(|v| v * inv);
    }
    total
}

/// Mean cross-entropy of the batch.
pub fn loss<F: Real>(params: &ModelParams<F>, batch: &Batch<F>, act: Activation) -> Result<f64> {
    check_input(params, &batch.inputs)?;
    check_labels(params, batch)?;
    let (_, mut logits) = forward_trace(params, batch.inputs, act);
    Ok(softmax_cross_entropy(&mut logits, batch.labels) / batch.len() as f64)
}

/// Mean cross-entropy and its analytic gradient.
pub fn loss_and_gradient<F: Real>(
    params: &ModelParams<F>,
    batch: &Batch<F>,
    act: Activation,
) -> Result<(f64, Gradient<F>)> {
    check_input(params, &batch.inputs)?;
    check_labels(params, batch)?;
    let n = batch.len();
    let (acts, mut delta) = forward_trace(params, batch.inputs, act);
    let loss = softmax_cross_entropy(&mut delta, batch.labels) / n as f64;

    // delta = (P - Y) / n
    for (mut row, &label) in delta.rows_mut().into_iter().zip(batch.labels) {
        row[label as usize] = row[label as usize] - F::one();
    }
    delta.mapv_inplace(|v| v / F::from_f64(n as f64));

    let mut grad = params.zeros_like();
    for k in (0..params.layers.len()).rev() {
        let prev = if k == 0 {
            batch.inputs
        } else {
            acts[k - 1].view()
        };
        grad.layers[k].weights = delta.t().dot(&prev);
        grad.layers[k].bias = delta.sum_axis(Axis(0));
        if k == 0 {
            break;
        }
        let mut upstream = delta.dot(&params.layers[k].weights);
        let a = &acts[k - 1];
        match act {
            Activation::Relu => {
                Zip::from(&mut upstream).and(a).for_each(|d, &a| {
                    if a <= F::zero() {
                        *d = F::zero();
                    }
                });
            }
            Activation::SoftmaxAll => {
                // dz = s * (da - <da, s>) per row
                for (mut d, s) in upstream.rows_mut().into_iter().zip(a.rows()) {
                    let dot = d.iter().zip(s).fold(F::zero(), |acc, (&x, &y)| acc + x * y);
                    Zip::from(&mut d)
                        .and(&s)
                        .for_each(|d, &s| *d = s * (*d - dot));
                }
            }
        }
        delta = upstream;
    }
    Ok((loss, grad))
}

/// Analytic gradient of the mean cross-entropy over `batch`.
pub fn gradient<F: Real>(
    params: &ModelParams<F>,
    batch: &Batch<F>,
    act: Activation,
) -> Result<Gradient<F>> {
    loss_and_gradient(params, batch, act).map(|(_, g)| g)
}

/// `local_epochs` passes of mini-batch SGD over `data`.
///
/// The visiting order is reshuffled every epoch from a stream seeded by
/// `seed`; the last mini-batch of an epoch may be partial.
pub fn train_local<F: Real>(
    params: &ModelParams<F>,
    data: &Batch<F>,
    spec: &TrainSpec,
    seed: u64,
) -> Result<ModelParams<F>> {
    spec.validate()?;
    check_input(params, &data.inputs)?;
    check_labels(params, data)?;
    let mut out = params.clone();
    let lr = F::from_f64(spec.learning_rate);
    let mut rng = seeded_rng(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut labels = Vec::with_capacity(spec.batch_size);
    for epoch in 0..spec.local_epochs {
        order.shuffle(&mut rng);
        for (step, chunk) in order.chunks(spec.batch_size).enumerate() {
            let inputs = data.inputs.select(Axis(0), chunk);
            labels.clear();
            labels.extend(chunk.iter().map(|&i| data.labels[i]));
            let mini = Batch::new(inputs.view(), &labels)?;
            let (loss, grad) = loss_and_gradient(&out, &mini, spec.hidden_activation)?;
            if !loss.is_finite() || !grad.iter().fold(F::zero(), |a, g| a + g).is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {loss} at epoch {epoch}, step {step}"
                )));
            }
            out.scaled_add(-lr, &grad);
        }
    }
    Ok(out)
}
