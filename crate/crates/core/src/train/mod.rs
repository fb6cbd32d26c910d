//! Training substrates: a minibatch SGD classifier trainer, undersampling, a
//! gridworld and a REINFORCE trainer for gridworld policies.

mod backprop;
mod classifier;
mod curve;
pub mod gridworld;
mod reinforce;

pub use classifier::{
    evaluate_classifier, gradient_check, loss_gradient, rebalance_undersample, train_classifier,
    ClassifierMetrics, TrainConfig, GRADIENT_CHECK_FLOOR, GRADIENT_CHECK_STEP,
};
pub use curve::{
    EpochRecord, IterationRecord, TrainingCurve, CLASSIFICATION_METRICS, REINFORCE_METRICS,
};
pub use gridworld::{Action, EpisodeState, GridError, GridWorld, Quadrant};
pub use reinforce::{
    evaluate_policy, evaluate_policy_on_targets, policy_gradient, random_policy_reward, rollout,
    train_reinforce, Episode, EvalReport, ReinforceConfig,
};

use thiserror::Error;

use crate::model::{DatasetError, ModelError, OutputActivation};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("inputs have dimension {found}, model expects {expected}")]
    InputDimension { expected: usize, found: usize },
    #[error("{classes} classes do not fit {outputs} model outputs")]
    TooManyClasses { classes: usize, outputs: usize },
    #[error("classifier training needs a softmax output, model has {0}")]
    UnsupportedOutput(OutputActivation),
    #[error("rebalancing needs exactly 2 classes, dataset has {0}")]
    NotBinary(usize),
    #[error("class {0} has no examples")]
    EmptyClass(usize),
    #[error("loss became NaN or infinite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("policy gradient became NaN or infinite at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error("unknown curve metric `{0}`")]
    UnknownMetric(String),
}
