//! Multilayer perceptron container and dataset ingestion.
//!
//! Layer `l` holds a `(sizes[l+1] x sizes[l])` weight matrix whose row `r` is the
//! incoming-weight vector of neuron `r`, plus a bias per neuron. Models are
//! values: every transformation returns a new [`Mlp`].

mod dataset;
mod idx;
mod io;
pub(crate) mod kernels;

pub use dataset::{relabel_binary, DatasetError, LabeledDataset};
pub use idx::{load_idx_dataset, parse_idx_images, parse_idx_labels, IdxError, IdxImages};
pub use io::{load_model, save_model, ModelFile, ModelFileError, FORMAT_TAG, FORMAT_VERSION};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::ot::Permutation;
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("layer_sizes must list at least an input, one hidden and an output layer, got {0:?}")]
    NoHiddenLayer(Vec<usize>),
    #[error("layer widths must be positive, got {0:?}")]
    ZeroWidth(Vec<usize>),
    #[error("layer {layer}: weights are {found_rows}x{found_cols}, expected {rows}x{cols}")]
    WeightShape {
        layer: usize,
        rows: usize,
        cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("layer {layer}: {found} biases, expected {expected}")]
    BiasLength {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer} contains a NaN or infinite parameter")]
    NonFiniteParameter { layer: usize },
    #[error("{count} weight layers given for layer_sizes of length {sizes}")]
    LayerCount { count: usize, sizes: usize },
    #[error("input has length {found}, model expects {expected}")]
    InputDimension { expected: usize, found: usize },
    #[error("layer index {index} is not a hidden layer (hidden layers are 1..={last})")]
    NotHiddenLayer { index: usize, last: usize },
    #[error("permutation has size {found}, hidden layer has width {expected}")]
    PermutationSize { expected: usize, found: usize },
    #[error("architecture mismatch: {left:?} vs {right:?}")]
    ArchitectureMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("activation mismatch: {0}")]
    ActivationMismatch(String),
    #[error("probe set is empty")]
    EmptyProbeSet,
    #[error("parameter vector has length {found}, model has {expected} parameters")]
    ParameterCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    #[default]
    Tanh,
    Relu,
}

impl HiddenActivation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => x.tanh(),
            HiddenActivation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y = f(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            HiddenActivation::Tanh => 1.0 - y * y,
            HiddenActivation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Softmax,
    Identity,
}

impl fmt::Display for HiddenActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HiddenActivation::Tanh => "tanh",
            HiddenActivation::Relu => "relu",
        })
    }
}

impl FromStr for HiddenActivation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(HiddenActivation::Tanh),
            "relu" => Ok(HiddenActivation::Relu),
            other => Err(format!(
                "unknown hidden activation `{other}` (expected tanh or relu)"
            )),
        }
    }
}

impl fmt::Display for OutputActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputActivation::Softmax => "softmax",
            OutputActivation::Identity => "identity",
        })
    }
}

/// `w * x + (1 - w) * y`, exact when `x == y`.
#[inline]
fn blend(x: f64, y: f64, w: f64) -> f64 {
    if x == y {
        x
    } else {
        w * x + (1.0 - w) * y
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// One fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub(crate) weights: Matrix,
    pub(crate) biases: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vec<f64>) -> Self {
        Self { weights, biases }
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    /// Incoming-weight vector of every neuron, optionally with the bias appended.
    pub fn incoming_vectors(&self, include_bias: bool) -> Vec<Vec<f64>> {
        self.weights
            .row_iter()
            .zip(&self.biases)
            .map(|(row, &b)| {
                let mut v = row.to_vec();
                if include_bias {
                    v.push(b);
                }
                v
            })
            .collect()
    }

    /// `out = W x + b`.
    #[inline]
    pub(crate) fn affine_into(&self, input: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.biases[r] + kernels::dot(self.weights.row(r), input);
        }
    }
}

/// A feed-forward network with one shared hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    layers: Vec<DenseLayer>,
    hidden: HiddenActivation,
    output: OutputActivation,
}

fn check_sizes(layer_sizes: &[usize]) -> Result<(), ModelError> {
    if layer_sizes.len() < 3 {
        return Err(ModelError::NoHiddenLayer(layer_sizes.to_vec()));
    }
    if layer_sizes.contains(&0) {
        return Err(ModelError::ZeroWidth(layer_sizes.to_vec()));
    }
    Ok(())
}

impl Mlp {
    /// Assemble a model, checking every shape against `layer_sizes`.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        layers: Vec<DenseLayer>,
        hidden: HiddenActivation,
        output: OutputActivation,
    ) -> Result<Self, ModelError> {
        check_sizes(&layer_sizes)?;
        if layers.len() + 1 != layer_sizes.len() {
            return Err(ModelError::LayerCount {
                count: layers.len(),
                sizes: layer_sizes.len(),
            });
        }
        for (l, layer) in layers.iter().enumerate() {
            let (rows, cols) = (layer_sizes[l + 1], layer_sizes[l]);
            if layer.weights.shape() != (rows, cols) {
                return Err(ModelError::WeightShape {
                    layer: l,
                    rows,
                    cols,
                    found_rows: layer.weights.rows(),
                    found_cols: layer.weights.cols(),
                });
            }
            if layer.biases.len() != rows {
                return Err(ModelError::BiasLength {
                    layer: l,
                    expected: rows,
                    found: layer.biases.len(),
                });
            }
            if !layer.weights.is_finite() || layer.biases.iter().any(|b| !b.is_finite()) {
                return Err(ModelError::NonFiniteParameter { layer: l });
            }
        }
        Ok(Self {
            layer_sizes,
            layers,
            hidden,
            output,
        })
    }

    /// Assemble a model, inferring `layer_sizes` from the weight shapes.
    pub fn new(
        layers: Vec<DenseLayer>,
        hidden: HiddenActivation,
        output: OutputActivation,
    ) -> Result<Self, ModelError> {
        let mut sizes = Vec::with_capacity(layers.len() + 1);
        if let Some(first) = layers.first() {
            sizes.push(first.fan_in());
        }
        sizes.extend(layers.iter().map(DenseLayer::fan_out));
        Self::from_parts(sizes, layers, hidden, output)
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden: HiddenActivation,
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Matrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-limit..=limit));
                DenseLayer::new(weights, vec![0.0; fan_out])
            })
            .collect();
        Self::from_parts(layer_sizes.to_vec(), layers, hidden, output)
    }

    /// [`Mlp::glorot`] with a fresh generator seeded by `seed`.
    pub fn glorot_seeded(
        layer_sizes: &[usize],
        hidden: HiddenActivation,
        output: OutputActivation,
        seed: u64,
    ) -> Result<Self, ModelError> {
        Self::glorot(layer_sizes, hidden, output, &mut seeded(seed))
    }

    /// All weights and biases zero.
    pub fn zeros(
        layer_sizes: &[usize],
        hidden: HiddenActivation,
        output: OutputActivation,
    ) -> Result<Self, ModelError> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| DenseLayer::new(Matrix::zeros(w[1], w[0]), vec![0.0; w[1]]))
            .collect();
        Self::from_parts(layer_sizes.to_vec(), layers, hidden, output)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> HiddenActivation {
        self.hidden
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    /// Number of hidden layers (layers whose neurons may be permuted).
    pub fn hidden_layer_count(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum()
    }

    /// Parameters flattened layer by layer: weights (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.biases);
        }
        out
    }

    /// Same architecture, parameters replaced from the layout of [`Mlp::params`].
    pub fn with_params(&self, params: &[f64]) -> Result<Self, ModelError> {
        if params.len() != self.num_params() {
            return Err(ModelError::ParameterCount {
                expected: self.num_params(),
                found: params.len(),
            });
        }
        let mut out = self.clone();
        let mut offset = 0;
        for (idx, l) in out.layers.iter_mut().enumerate() {
            let w = l.weights.as_mut_slice();
            w.copy_from_slice(&params[offset..offset + w.len()]);
            offset += w.len();
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
            if !l.weights.is_finite() || l.biases.iter().any(|b| !b.is_finite()) {
                return Err(ModelError::NonFiniteParameter { layer: idx });
            }
        }
        Ok(out)
    }

    pub fn same_architecture(&self, other: &Mlp) -> Result<(), ModelError> {
        if self.layer_sizes != other.layer_sizes {
            return Err(ModelError::ArchitectureMismatch {
                left: self.layer_sizes.clone(),
                right: other.layer_sizes.clone(),
            });
        }
        if self.hidden != other.hidden || self.output != other.output {
            return Err(ModelError::ActivationMismatch(format!(
                "{}/{} vs {}/{}",
                self.hidden, self.output, other.hidden, other.output
            )));
        }
        Ok(())
    }

    /// `weight * self + (1 - weight) * other`, parameter by parameter.
    pub fn convex_combination(&self, other: &Mlp, weight: f64) -> Result<Mlp, ModelError> {
        self.same_architecture(other)?;
        let mut out = self.clone();
        for (o, b) in out.layers.iter_mut().zip(&other.layers) {
            for (x, y) in o
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(b.weights.as_slice())
            {
                *x = blend(*x, *y, weight);
            }
            for (x, y) in o.biases.iter_mut().zip(&b.biases) {
                *x = blend(*x, *y, weight);
            }
        }
        Ok(out)
    }

    fn check_input(&self, input: &[f64]) -> Result<(), ModelError> {
        if input.len() != self.input_dim() {
            return Err(ModelError::InputDimension {
                expected: self.input_dim(),
                found: input.len(),
            });
        }
        Ok(())
    }

    /// Network output for one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_input(input)?;
        Ok(self.forward_unchecked(input))
    }

    pub(crate) fn forward_unchecked(&self, input: &[f64]) -> Vec<f64> {
        let mut current = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.fan_out()];
            layer.affine_into(&current, &mut next);
            if l < last {
                for v in &mut next {
                    *v = self.hidden.apply(*v);
                }
            } else if self.output == OutputActivation::Softmax {
                softmax_in_place(&mut next);
            }
            current = next;
        }
        current
    }

    /// Reorder the neurons of hidden layer `layer_index` (an index into
    /// `layer_sizes`, so `1..=hidden_layer_count()`).
    ///
    /// Rows and biases of the incoming layer are permuted and the matching
    /// columns of the outgoing layer follow, which leaves the network function
    /// unchanged.
    pub fn apply_hidden_permutation(
        &self,
        layer_index: usize,
        perm: &Permutation,
    ) -> Result<Mlp, ModelError> {
        let last = self.hidden_layer_count();
        if layer_index == 0 || layer_index > last {
            return Err(ModelError::NotHiddenLayer {
                index: layer_index,
                last,
            });
        }
        let width = self.layer_sizes[layer_index];
        if perm.len() != width {
            return Err(ModelError::PermutationSize {
                expected: width,
                found: perm.len(),
            });
        }
        let mut out = self.clone();
        let incoming = &self.layers[layer_index - 1];
        let outgoing = &self.layers[layer_index];
        let map = perm.mapping();
        {
            let dst = &mut out.layers[layer_index - 1];
            for (j, &src) in map.iter().enumerate() {
                dst.weights
                    .row_mut(j)
                    .copy_from_slice(incoming.weights.row(src));
                dst.biases[j] = incoming.biases[src];
            }
        }
        {
            let dst = &mut out.layers[layer_index];
            for r in 0..outgoing.fan_out() {
                let src_row = outgoing.weights.row(r);
                let dst_row = dst.weights.row_mut(r);
                for (j, &src) in map.iter().enumerate() {
                    dst_row[j] = src_row[src];
                }
            }
        }
        Ok(out)
    }
}

/// Seeded inputs for comparing two models' behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    inputs: Vec<Vec<f64>>,
    seed: u64,
}

impl ProbeSet {
    /// `count` vectors with coordinates uniform in `[low, high)`.
    pub fn uniform(
        dim: usize,
        count: usize,
        low: f64,
        high: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if count == 0 || dim == 0 {
            return Err(ModelError::EmptyProbeSet);
        }
        let mut rng = seeded(seed);
        let inputs = (0..count)
            .map(|_| (0..dim).map(|_| rng.gen_range(low..high)).collect())
            .collect();
        Ok(Self { inputs, seed })
    }

    /// 100 probes in `[-1, 1)`.
    pub fn standard(dim: usize, seed: u64) -> Self {
        Self::uniform(dim, 100, -1.0, 1.0, seed).expect("dim checked by caller")
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }
}

/// Largest L-infinity distance between the two models' outputs over the probes.
pub fn functional_distance(a: &Mlp, b: &Mlp, probes: &ProbeSet) -> Result<f64, ModelError> {
    if a.input_dim() != b.input_dim() || a.output_dim() != b.output_dim() {
        return Err(ModelError::ArchitectureMismatch {
            left: a.layer_sizes().to_vec(),
            right: b.layer_sizes().to_vec(),
        });
    }
    let mut worst = 0.0f64;
    for x in probes.inputs() {
        let ya = a.forward(x)?;
        let yb = b.forward(x)?;
        for (p, q) in ya.iter().zip(&yb) {
            let d = (p - q).abs();
            // NaN must not disappear in the max
            if d.is_nan() {
                return Ok(f64::NAN);
            }
            worst = worst.max(d);
        }
    }
    Ok(worst)
}
