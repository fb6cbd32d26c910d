use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::fusion::FusionConfig;
use crate::model::HiddenActivation;
use crate::train::{GridWorld, Quadrant, ReinforceConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Contender {
    FusedOt,
    FusedNaive,
    Scratch,
    ParentA,
    ParentB,
}

impl Contender {
    pub const ALL: [Contender; 5] = [
        Contender::FusedOt,
        Contender::FusedNaive,
        Contender::Scratch,
        Contender::ParentA,
        Contender::ParentB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Contender::FusedOt => "fused_ot",
            Contender::FusedNaive => "fused_naive",
            Contender::Scratch => "scratch",
            Contender::ParentA => "parent_a",
            Contender::ParentB => "parent_b",
        }
    }

    fn needs_both_parents(self) -> bool {
        matches!(self, Contender::FusedOt | Contender::FusedNaive)
    }
}

impl fmt::Display for Contender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Contender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Contender::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown contender `{s}`"))
    }
}

/// A metric that must reach `value` for a curve position to count as converged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub metric: String,
    pub value: f64,
}

fn default_thresholds() -> Vec<Threshold> {
    vec![
        Threshold {
            metric: "train_accuracy".into(),
            value: 0.95,
        },
        Threshold {
            metric: "validation_accuracy".into(),
            value: 0.90,
        },
    ]
}

fn default_ratio() -> f64 {
    2.0
}

fn default_retrain_epochs() -> usize {
    10
}

/// Binary digit-recognition tasks on IDX data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierTask {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub parent_a_digits: Vec<usize>,
    pub parent_b_digits: Vec<usize>,
    pub fused_digits: Vec<usize>,
    #[serde(default = "default_ratio")]
    pub rebalance_ratio: f64,
    /// Configuration for parent training; retraining reuses it with `retrain_epochs`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_retrain_epochs")]
    pub retrain_epochs: usize,
    /// All thresholds must hold at the same epoch.
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<Threshold>,
    /// Use only the first `n` examples of each IDX file (quick runs).
    #[serde(default)]
    pub limit: Option<usize>,
}

fn default_grid() -> usize {
    9
}

fn default_max_steps() -> usize {
    50
}

fn default_eval_episodes() -> usize {
    100
}

fn default_fraction() -> f64 {
    0.75
}

fn default_retrain_iterations() -> usize {
    10
}

/// Quadrant-reach tasks on the gridworld.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridworldTask {
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    pub parent_a_quadrants: Vec<Quadrant>,
    pub parent_b_quadrants: Vec<Quadrant>,
    pub fused_quadrants: Vec<Quadrant>,
    /// Configuration for parent training; retraining reuses it with `retrain_iterations`.
    #[serde(default)]
    pub train: ReinforceConfig,
    #[serde(default = "default_retrain_iterations")]
    pub retrain_iterations: usize,
    /// Greedy evaluation episodes for final metrics.
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    /// Threshold as a fraction of the best contender's final curve value.
    #[serde(default = "default_fraction")]
    pub threshold_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentTask {
    Classifier(ClassifierTask),
    Gridworld(GridworldTask),
}

fn all_contenders() -> Vec<Contender> {
    Contender::ALL.to_vec()
}

/// Full description of a fuse-then-retrain comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(flatten)]
    pub task: ExperimentTask,
    pub architecture: Vec<usize>,
    #[serde(default)]
    pub hidden_activation: HiddenActivation,
    pub seeds: Vec<u64>,
    #[serde(default = "all_contenders")]
    pub contenders: Vec<Contender>,
    #[serde(default)]
    pub fusion: FusionConfig,
}

fn is_superset<T: Ord + Copy>(big: &[T], small: &[T]) -> bool {
    let big: BTreeSet<T> = big.iter().copied().collect();
    small.iter().all(|x| big.contains(x))
}

fn same_set<T: Ord + Copy>(a: &[T], b: &[T]) -> bool {
    a.iter().copied().collect::<BTreeSet<T>>() == b.iter().copied().collect::<BTreeSet<T>>()
}

impl ExperimentSpec {
    /// Parse a JSON spec. Relative data paths are taken relative to the spec file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut spec = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            spec.resolve_paths(dir);
        }
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| PipelineError::MalformedSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let ExperimentTask::Classifier(c) = &mut self.task {
            for p in [
                &mut c.train_images,
                &mut c.train_labels,
                &mut c.test_images,
                &mut c.test_labels,
            ] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn needs_parent_b(&self) -> bool {
        self.contenders
            .iter()
            .any(|c| c.needs_both_parents() || *c == Contender::ParentB)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::InvalidSpec(msg));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.contenders.is_empty() {
            return bad("at least one contender is required".into());
        }
        let unique: BTreeSet<_> = self.contenders.iter().collect();
        if unique.len() != self.contenders.len() {
            return bad("contenders must be distinct".into());
        }
        let unique_seeds: BTreeSet<_> = self.seeds.iter().collect();
        if unique_seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.architecture.len() < 3 || self.architecture.contains(&0) {
            return bad(format!(
                "architecture needs positive widths and a hidden layer, got {:?}",
                self.architecture
            ));
        }
        self.fusion
            .validate()
            .map_err(|e| PipelineError::InvalidSpec(e.to_string()))?;
        let (n_in, n_out) = (
            self.architecture[0],
            *self.architecture.last().expect("checked length"),
        );
        match &self.task {
            ExperimentTask::Classifier(c) => {
                if n_out != 2 {
                    return bad(format!(
                        "binary tasks need 2 outputs, architecture has {n_out}"
                    ));
                }
                if c.parent_a_digits.is_empty()
                    || c.parent_b_digits.is_empty()
                    || c.fused_digits.is_empty()
                {
                    return bad("digit sets must be non-empty".into());
                }
                if same_set(&c.parent_a_digits, &c.parent_b_digits) {
                    return bad("parent tasks must differ".into());
                }
                if !is_superset(&c.fused_digits, &c.parent_a_digits)
                    || (self.needs_parent_b() && !is_superset(&c.fused_digits, &c.parent_b_digits))
                {
                    return bad("fused digits must include every parent digit".into());
                }
                if c.retrain_epochs == 0 {
                    return bad("retrain_epochs must be at least 1".into());
                }
                if c.thresholds.is_empty() {
                    return bad("at least one threshold is required".into());
                }
                c.train
                    .validate()
                    .map_err(|e| PipelineError::InvalidSpec(e.to_string()))?;
            }
            ExperimentTask::Gridworld(g) => {
                if n_in != GridWorld::OBSERVATION_DIM || n_out != GridWorld::ACTIONS {
                    return bad(format!(
                        "gridworld policies map 2 inputs to 4 actions, got {:?}",
                        self.architecture
                    ));
                }
                if same_set(&g.parent_a_quadrants, &g.parent_b_quadrants) {
                    return bad("parent tasks must differ".into());
                }
                if !is_superset(&g.fused_quadrants, &g.parent_a_quadrants)
                    || (self.needs_parent_b()
                        && !is_superset(&g.fused_quadrants, &g.parent_b_quadrants))
                {
                    return bad("fused quadrants must include every parent quadrant".into());
                }
                for q in [
                    &g.parent_a_quadrants,
                    &g.parent_b_quadrants,
                    &g.fused_quadrants,
                ] {
                    GridWorld::new(g.grid, q, g.max_steps)
                        .map_err(|e| PipelineError::InvalidSpec(e.to_string()))?;
                }
                if g.retrain_iterations == 0 || g.eval_episodes == 0 {
                    return bad("retrain_iterations and eval_episodes must be at least 1".into());
                }
                if !(0.0..=1.0).contains(&g.threshold_fraction) {
                    return bad("threshold_fraction must lie in [0, 1]".into());
                }
                g.train
                    .validate()
                    .map_err(|e| PipelineError::InvalidSpec(e.to_string()))?;
            }
        }
        Ok(())
    }
}
