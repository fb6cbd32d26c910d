//! Optimal-transport fusion of multilayer perceptrons.
//!
//! Two independently trained networks with identical architecture are fused by
//! aligning the hidden neurons of one (the *source*) to those of the other (the
//! *target*) layer by layer, then averaging the aligned parameters. Neurons are
//! matched through an optimal coupling between the sets of incoming-weight
//! vectors, which for equal widths and uniform masses is a permutation.
//!
//! Crate layout:
//!
//! - [`ot`]: discrete optimal transport (cost matrices, exact and entropic solvers,
//!   EMD, permutation extraction).
//! - [`model`]: the [`Mlp`] container, hidden-neuron permutation surgery, the JSON
//!   model format and IDX dataset ingestion.
//! - [`fusion`]: layer-wise neuron alignment, OT fusion and the naive-averaging baseline.
//! - [`train`]: minibatch SGD with backprop, undersampling, a gridworld and a
//!   REINFORCE trainer.
//! - [`pipeline`]: train parents, fuse, retrain every contender and compare.

pub mod fusion;
pub mod matrix;
pub mod model;
pub mod ot;
pub mod pipeline;
pub mod rng;
pub mod train;

pub use fusion::{
    align_neurons, fuse_many, fuse_naive, fuse_ot, AlignmentResult, AlignmentSolver, FusionConfig,
};
pub use matrix::Matrix;
pub use model::{HiddenActivation, LabeledDataset, Mlp, OutputActivation, ProbeSet};
pub use ot::{CostMatrix, Coupling, DiscreteDistribution, GroundMetric, Permutation};
