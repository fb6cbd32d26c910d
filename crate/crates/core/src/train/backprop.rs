//! Cached forward pass and reverse-mode gradients for [`Mlp`].

use crate::matrix::Matrix;
use crate::model::kernels::{axpy, dot, sparse_dot};
use crate::model::{softmax_in_place, DenseLayer, Mlp, OutputActivation};

/// Parameter-shaped accumulator.
#[derive(Debug, Clone)]
pub(crate) struct Gradient {
    pub layers: Vec<DenseLayer>,
}

impl Gradient {
    pub fn zeros_like(model: &Mlp) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|l| {
                DenseLayer::new(
                    Matrix::zeros(l.fan_out(), l.fan_in()),
                    vec![0.0; l.fan_out()],
                )
            })
            .collect();
        Self { layers }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.as_mut_slice().fill(0.0);
            l.biases.fill(0.0);
        }
    }

    /// Same layout as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.biases.iter().all(|b| b.is_finite()))
    }
}

/// Scratch buffers reused across examples.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    /// Post-activation output of every layer; the last entry is the network output.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    nonzero: Vec<usize>,
    sparse: bool,
}

impl Workspace {
    pub fn new(model: &Mlp) -> Self {
        let widths = &model.layer_sizes()[1..];
        Self {
            acts: widths.iter().map(|&w| vec![0.0; w]).collect(),
            deltas: widths.iter().map(|&w| vec![0.0; w]).collect(),
            nonzero: Vec::with_capacity(model.input_dim()),
            sparse: false,
        }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least two layers")
    }

    /// Forward pass keeping every activation. Inputs that are mostly zero
    /// (image data) take a sparse path through the first layer.
    pub fn forward(&mut self, model: &Mlp, x: &[f64]) -> &[f64] {
        self.nonzero.clear();
        self.nonzero.extend(
            x.iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, _)| i),
        );
        self.sparse = 2 * self.nonzero.len() < x.len();

        let last = model.layers().len() - 1;
        for (l, layer) in model.layers().iter().enumerate() {
            let (before, after) = self.acts.split_at_mut(l);
            let out = &mut after[0];
            if l == 0 {
                for (r, o) in out.iter_mut().enumerate() {
                    let w = layer.weights.row(r);
                    let z = if self.sparse {
                        sparse_dot(w, x, &self.nonzero)
                    } else {
                        dot(w, x)
                    };
                    *o = layer.biases[r] + z;
                }
            } else {
                layer.affine_into(&before[l - 1], out);
            }
            if l < last {
                let act = model.hidden_activation();
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            } else if model.output_activation() == OutputActivation::Softmax {
                softmax_in_place(out);
            }
        }
        self.output()
    }

    /// Accumulate `scale * d(loss)/d(params)` into `grad`, given the gradient
    /// of the loss with respect to the output layer's pre-activation. Must
    /// follow [`Workspace::forward`] on the same `x`.
    pub fn backward(
        &mut self,
        model: &Mlp,
        x: &[f64],
        output_delta: &[f64],
        scale: f64,
        grad: &mut Gradient,
    ) {
        let n_layers = model.layers().len();
        self.deltas[n_layers - 1].copy_from_slice(output_delta);
        let act = model.hidden_activation();
        for l in (0..n_layers).rev() {
            let layer = &model.layers()[l];
            let g = &mut grad.layers[l];
            let (lower, upper) = self.deltas.split_at_mut(l);
            let delta = &upper[0];
            if l == 0 {
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let a = scale * d;
                    g.biases[r] += a;
                    let row = g.weights.row_mut(r);
                    if self.sparse {
                        for &k in &self.nonzero {
                            row[k] += a * x[k];
                        }
                    } else {
                        axpy(a, x, row);
                    }
                }
            } else {
                let input = &self.acts[l - 1];
                let prev = &mut lower[l - 1];
                prev.fill(0.0);
                for (r, &d) in delta.iter().enumerate() {
                    let a = scale * d;
                    g.biases[r] += a;
                    axpy(a, input, g.weights.row_mut(r));
                    axpy(d, layer.weights.row(r), prev);
                }
                for (p, &y) in prev.iter_mut().zip(input) {
                    *p *= act.derivative_from_output(y);
                }
            }
        }
    }
}

/// Softmax cross-entropy: returns the loss and writes `p - onehot(label)`.
pub(crate) fn cross_entropy_delta(probs: &[f64], label: usize, delta: &mut [f64]) -> f64 {
    delta.copy_from_slice(probs);
    delta[label] -= 1.0;
    -probs[label].max(f64::MIN_POSITIVE).ln()
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
