use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::backprop::{argmax, cross_entropy_delta, Gradient, Workspace};
use super::curve::{EpochRecord, TrainingCurve};
use super::TrainError;
use crate::model::{LabeledDataset, Mlp, OutputActivation};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub validation_split: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            learning_rate: 0.01,
            momentum: 0.9,
            validation_split: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_split) {
            return bad("validation_split must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Mean cross-entropy and accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub examples: usize,
}

fn check_compatible(model: &Mlp, dataset: &LabeledDataset) -> Result<(), TrainError> {
    if model.output_activation() != OutputActivation::Softmax {
        return Err(TrainError::UnsupportedOutput(model.output_activation()));
    }
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if dataset.dim() != model.input_dim() {
        return Err(TrainError::InputDimension {
            expected: model.input_dim(),
            found: dataset.dim(),
        });
    }
    if dataset.num_classes() > model.output_dim() {
        return Err(TrainError::TooManyClasses {
            classes: dataset.num_classes(),
            outputs: model.output_dim(),
        });
    }
    Ok(())
}

fn metrics_over(
    model: &Mlp,
    dataset: &LabeledDataset,
    indices: impl Iterator<Item = usize>,
) -> ClassifierMetrics {
    let mut ws = Workspace::new(model);
    let mut delta = vec![0.0; model.output_dim()];
    let (mut loss, mut correct, mut n) = (0.0, 0usize, 0usize);
    for i in indices {
        let label = dataset.label(i);
        let probs = ws.forward(model, dataset.input(i));
        if argmax(probs) == label {
            correct += 1;
        }
        loss += cross_entropy_delta(ws.output(), label, &mut delta);
        n += 1;
    }
    ClassifierMetrics {
        loss: loss / n as f64,
        accuracy: correct as f64 / n as f64,
        examples: n,
    }
}

/// Loss and accuracy of `model` on the whole dataset.
pub fn evaluate_classifier(
    model: &Mlp,
    dataset: &LabeledDataset,
) -> Result<ClassifierMetrics, TrainError> {
    check_compatible(model, dataset)?;
    Ok(metrics_over(model, dataset, 0..dataset.len()))
}

/// Minibatch SGD with momentum on softmax cross-entropy.
///
/// The dataset is shuffled once with the config seed and the last
/// `validation_split` fraction is held out. Training examples are reshuffled
/// every epoch from a stream derived from the same seed, so two runs with the
/// same seed and data see identical batches regardless of the initial model.
pub fn train_classifier(
    init: &Mlp,
    dataset: &LabeledDataset,
    config: &TrainConfig,
) -> Result<(Mlp, TrainingCurve), TrainError> {
    config.validate()?;
    check_compatible(init, dataset)?;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seeded(derive_seed(config.seed, &["split"])));
    let n_val = (dataset.len() as f64 * config.validation_split).round() as usize;
    let n_train = dataset.len() - n_val;
    if n_train == 0 {
        return Err(TrainError::InvalidConfig(
            "validation split leaves no training data".into(),
        ));
    }
    let (train_idx, val_idx) = order.split_at(n_train);
    let mut train_idx = train_idx.to_vec();
    let mut batch_rng = seeded(derive_seed(config.seed, &["batches"]));

    let mut model = init.clone();
    let mut grad = Gradient::zeros_like(&model);
    let mut velocity = Gradient::zeros_like(&model);
    let mut ws = Workspace::new(&model);
    let mut delta = vec![0.0; model.output_dim()];
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut batch_rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (batch_no, batch) in train_idx.chunks(config.batch_size).enumerate() {
            grad.clear();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let x = dataset.input(i);
                let label = dataset.label(i);
                ws.forward(&model, x);
                if argmax(ws.output()) == label {
                    correct += 1;
                }
                batch_loss += cross_entropy_delta(ws.output(), label, &mut delta);
                ws.backward(&model, x, &delta, scale, &mut grad);
            }
            if !batch_loss.is_finite() || !grad.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_no + 1,
                });
            }
            loss_sum += batch_loss;
            seen += batch.len();
            sgd_step(
                &mut model,
                &grad,
                &mut velocity,
                config.learning_rate,
                config.momentum,
            );
        }
        let (validation_loss, validation_accuracy) = if val_idx.is_empty() {
            (None, None)
        } else {
            let m = metrics_over(&model, dataset, val_idx.iter().copied());
            (Some(m.loss), Some(m.accuracy))
        };
        if validation_loss.is_some_and(|l: f64| !l.is_finite()) {
            return Err(TrainError::NonFiniteLoss { epoch, batch: 0 });
        }
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct as f64 / seen as f64,
            validation_loss,
            validation_accuracy,
        });
    }
    Ok((model, TrainingCurve::Classification(records)))
}

/// `v = momentum * v + g; theta -= lr * v`.
pub(crate) fn sgd_step(
    model: &mut Mlp,
    grad: &Gradient,
    velocity: &mut Gradient,
    lr: f64,
    momentum: f64,
) {
    for ((layer, g), v) in model
        .layers_mut()
        .iter_mut()
        .zip(&grad.layers)
        .zip(velocity.layers.iter_mut())
    {
        let params = layer
            .weights
            .as_mut_slice()
            .iter_mut()
            .chain(layer.biases.iter_mut());
        let grads = g.weights.as_slice().iter().chain(&g.biases);
        let vels = v
            .weights
            .as_mut_slice()
            .iter_mut()
            .chain(v.biases.iter_mut());
        for ((p, &gi), vi) in params.zip(grads).zip(vels) {
            *vi = momentum * *vi + gi;
            *p -= lr * *vi;
        }
    }
}

/// Analytic gradient of the mean cross-entropy over `batch`, in the layout of [`Mlp::params`].
pub fn loss_gradient(model: &Mlp, batch: &LabeledDataset) -> Result<Vec<f64>, TrainError> {
    check_compatible(model, batch)?;
    let mut grad = Gradient::zeros_like(model);
    let mut ws = Workspace::new(model);
    let mut delta = vec![0.0; model.output_dim()];
    let scale = 1.0 / batch.len() as f64;
    for i in 0..batch.len() {
        let x = batch.input(i);
        ws.forward(model, x);
        cross_entropy_delta(ws.output(), batch.label(i), &mut delta);
        ws.backward(model, x, &delta, scale, &mut grad);
    }
    Ok(grad.flatten())
}

/// Floor on the denominator of the relative error, so that parameters with
/// (near) zero gradient are judged by absolute error instead.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-4;
pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-4)` over all
/// parameters, with central differences of step `1e-5`.
pub fn gradient_check(model: &Mlp, batch: &LabeledDataset) -> Result<f64, TrainError> {
    let analytic = loss_gradient(model, batch)?;
    let base = model.params();
    let loss_at = |params: &[f64]| -> Result<f64, TrainError> {
        let m = model.with_params(params)?;
        Ok(metrics_over(&m, batch, 0..batch.len()).loss)
    };
    let mut worst = 0.0f64;
    let mut probe = base.clone();
    for (k, &a) in analytic.iter().enumerate() {
        let h = GRADIENT_CHECK_STEP;
        probe[k] = base[k] + h;
        let up = loss_at(&probe)?;
        probe[k] = base[k] - h;
        let down = loss_at(&probe)?;
        probe[k] = base[k];
        let numeric = (up - down) / (2.0 * h);
        let denom = a.abs().max(numeric.abs()).max(GRADIENT_CHECK_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Randomly drop majority-class examples until the majority holds
/// `round(majority_ratio * minority)` examples (or all it has, if fewer).
/// The minority class is kept whole and the result is shuffled.
pub fn rebalance_undersample(
    dataset: &LabeledDataset,
    majority_ratio: f64,
    seed: u64,
) -> Result<LabeledDataset, TrainError> {
    if dataset.num_classes() != 2 {
        return Err(TrainError::NotBinary(dataset.num_classes()));
    }
    if !(majority_ratio.is_finite() && majority_ratio >= 1.0) {
        return Err(TrainError::InvalidConfig(format!(
            "majority_ratio must be >= 1, got {majority_ratio}"
        )));
    }
    let counts = dataset.class_counts();
    let (minority, majority) = if counts[0] <= counts[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    if counts[minority] == 0 {
        return Err(TrainError::EmptyClass(minority));
    }
    let mut rng = seeded(seed);
    let by_class = |c: usize| (0..dataset.len()).filter(move |&i| dataset.label(i) == c);
    let mut majority_idx: Vec<usize> = by_class(majority).collect();
    majority_idx.shuffle(&mut rng);
    let keep =
        ((majority_ratio * counts[minority] as f64).round() as usize).min(majority_idx.len());
    let mut chosen: Vec<usize> = by_class(minority)
        .chain(majority_idx.into_iter().take(keep))
        .collect();
    chosen.shuffle(&mut rng);
    Ok(dataset.subset(&chosen)?)
}
