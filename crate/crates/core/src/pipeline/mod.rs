//! Fuse-then-retrain experiments.
//!
//! For every seed: train parent A and parent B on their own tasks, fuse them
//! with OT alignment and with naive averaging, then retrain every contender on
//! the combined task with the same budget and the same data order, and record
//! curves, final metrics and how quickly each contender crossed the threshold.

mod report;
mod spec;

pub use report::{median, write_report_dir};
pub use spec::{
    ClassifierTask, Contender, ExperimentSpec, ExperimentTask, GridworldTask, Threshold,
};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

use crate::fusion::{align_neurons, fuse_naive, FusionError};
use crate::model::{
    load_idx_dataset, relabel_binary, IdxError, LabeledDataset, Mlp, OutputActivation,
};
use crate::rng::derive_seed;
use crate::train::{
    evaluate_classifier, evaluate_policy, rebalance_undersample, train_classifier, train_reinforce,
    GridWorld, TrainError, TrainingCurve,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed experiment spec: {0}")]
    MalformedSpec(String),
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("seed {seed}, {stage}: {message}")]
    Stage {
        seed: u64,
        stage: String,
        message: String,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("writing report: {0}")]
    Csv(#[from] csv::Error),
    #[error("every seed failed; first failure: {0}")]
    AllSeedsFailed(String),
}

/// First 1-based position whose `metric` is at least `threshold`, or `None`.
pub fn epochs_to_threshold(
    curve: &TrainingCurve,
    metric: &str,
    threshold: f64,
) -> Result<Option<usize>, PipelineError> {
    epochs_to_thresholds(
        curve,
        &[Threshold {
            metric: metric.to_string(),
            value: threshold,
        }],
    )
}

/// First 1-based position at which every threshold holds simultaneously.
pub fn epochs_to_thresholds(
    curve: &TrainingCurve,
    thresholds: &[Threshold],
) -> Result<Option<usize>, PipelineError> {
    let series = thresholds
        .iter()
        .map(|t| curve.metric(&t.metric).map(|v| (v, t.value)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((0..curve.len())
        .find(|&i| series.iter().all(|(v, thr)| v[i] >= *thr))
        .map(|i| i + 1))
}

/// One contender retrained under one seed.
#[derive(Debug, Clone)]
pub struct ContenderRecord {
    pub contender: Contender,
    pub seed: u64,
    pub curve: TrainingCurve,
    /// Primary metric before retraining (test accuracy or greedy mean reward).
    pub initial_metric: f64,
    /// Primary metric after retraining.
    pub final_metric: f64,
    pub final_metrics: BTreeMap<String, f64>,
    pub epochs_to_threshold: Option<usize>,
    pub model: Mlp,
}

/// Parents and fusion diagnostics for one seed.
#[derive(Debug, Clone)]
pub struct SeedSummary {
    pub seed: u64,
    pub parent_a_metric: f64,
    pub parent_b_metric: Option<f64>,
    pub layer_emds: Vec<f64>,
    pub threshold: String,
}

#[derive(Debug, Clone)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub kind: &'static str,
    /// `"test_accuracy"` or `"eval_mean_reward"`.
    pub primary_metric: &'static str,
    pub records: Vec<ContenderRecord>,
    pub seeds: Vec<SeedSummary>,
    pub failures: Vec<SeedFailure>,
}

impl ComparisonReport {
    pub fn records_for(&self, contender: Contender) -> impl Iterator<Item = &ContenderRecord> {
        self.records
            .iter()
            .filter(move |r| r.contender == contender)
    }

    /// Median primary metric after retraining.
    pub fn median_final(&self, contender: Contender) -> Option<f64> {
        median(
            &self
                .records_for(contender)
                .map(|r| r.final_metric)
                .collect::<Vec<_>>(),
        )
    }

    /// Median epochs-to-threshold, counting "never" as larger than any value.
    /// `None` when the median itself is "never".
    pub fn median_epochs(&self, contender: Contender) -> Option<f64> {
        let values: Vec<f64> = self
            .records_for(contender)
            .map(|r| r.epochs_to_threshold.map_or(f64::INFINITY, |e| e as f64))
            .collect();
        median(&values).filter(|m| m.is_finite())
    }
}

struct SeedOutcome {
    records: Vec<ContenderRecord>,
    summary: SeedSummary,
}

/// Loaded datasets shared by every seed of a classifier experiment.
struct ClassifierData {
    train: LabeledDataset,
    test: LabeledDataset,
}

fn stage<E: std::fmt::Display>(seed: u64, stage: &str) -> impl FnOnce(E) -> PipelineError + '_ {
    move |e| PipelineError::Stage {
        seed,
        stage: stage.to_string(),
        message: e.to_string(),
    }
}

fn initial_model(spec: &ExperimentSpec, seed: u64, role: &str) -> Result<Mlp, PipelineError> {
    Mlp::glorot_seeded(
        &spec.architecture,
        spec.hidden_activation,
        OutputActivation::Softmax,
        derive_seed(seed, &["init", role]),
    )
    .map_err(stage(seed, role))
}

/// Initial model per contender, plus the per-layer alignment EMDs.
type Inits = (Vec<(Contender, Mlp)>, Vec<f64>);

/// Fusion contenders built from the two parents.
fn fused_inits(
    spec: &ExperimentSpec,
    seed: u64,
    parent_a: &Mlp,
    parent_b: Option<&Mlp>,
) -> Result<Inits, PipelineError> {
    let mut inits = Vec::new();
    let mut emds = Vec::new();
    for &c in &spec.contenders {
        let model = match c {
            Contender::ParentA => parent_a.clone(),
            Contender::Scratch => initial_model(spec, seed, "scratch")?,
            Contender::ParentB => parent_b.expect("parent B trained when requested").clone(),
            Contender::FusedOt => {
                let b = parent_b.expect("parent B trained for fusion");
                let alignment =
                    align_neurons(parent_a, b, &spec.fusion).map_err(stage(seed, "fusion"))?;
                emds = alignment.layer_emds.clone();
                parent_a
                    .convex_combination(&alignment.aligned_source, spec.fusion.average_weight)
                    .map_err(|e| stage(seed, "fusion")(FusionError::from(e)))?
            }
            Contender::FusedNaive => {
                let b = parent_b.expect("parent B trained for fusion");
                fuse_naive(parent_a, b, spec.fusion.average_weight)
                    .map_err(stage(seed, "naive fusion"))?
            }
        };
        inits.push((c, model));
    }
    Ok((inits, emds))
}

fn task_data(
    data: &LabeledDataset,
    digits: &[usize],
    ratio: f64,
    seed: u64,
    role: &str,
) -> Result<LabeledDataset, PipelineError> {
    let relabelled = relabel_binary(data, digits).map_err(stage(seed, role))?;
    rebalance_undersample(&relabelled, ratio, derive_seed(seed, &["rebalance", role]))
        .map_err(stage(seed, role))
}

fn run_classifier_seed(
    spec: &ExperimentSpec,
    task: &ClassifierTask,
    data: &ClassifierData,
    seed: u64,
) -> Result<SeedOutcome, PipelineError> {
    let parent = |role: &str, digits: &[usize]| -> Result<(Mlp, f64), PipelineError> {
        let train = task_data(&data.train, digits, task.rebalance_ratio, seed, role)?;
        let config = crate::train::TrainConfig {
            seed: derive_seed(seed, &["train", role]),
            ..task.train
        };
        let (model, _) = train_classifier(&initial_model(spec, seed, role)?, &train, &config)
            .map_err(stage(seed, role))?;
        let test = relabel_binary(&data.test, digits).map_err(stage(seed, role))?;
        let metric = evaluate_classifier(&model, &test)
            .map_err(stage(seed, role))?
            .accuracy;
        Ok((model, metric))
    };
    let (parent_a, parent_a_metric) = parent("parent_a", &task.parent_a_digits)?;
    let parent_b = if spec.needs_parent_b() {
        Some(parent("parent_b", &task.parent_b_digits)?)
    } else {
        None
    };

    let (inits, layer_emds) = fused_inits(spec, seed, &parent_a, parent_b.as_ref().map(|p| &p.0))?;
    let retrain_data = task_data(
        &data.train,
        &task.fused_digits,
        task.rebalance_ratio,
        seed,
        "fused",
    )?;
    let test = relabel_binary(&data.test, &task.fused_digits).map_err(stage(seed, "fused"))?;
    let config = crate::train::TrainConfig {
        epochs: task.retrain_epochs,
        seed: derive_seed(seed, &["retrain"]),
        ..task.train
    };

    let mut records = Vec::new();
    for (contender, init) in inits {
        let label = format!("retrain {contender}");
        let initial = evaluate_classifier(&init, &test).map_err(stage(seed, &label))?;
        let (model, curve) =
            train_classifier(&init, &retrain_data, &config).map_err(stage(seed, &label))?;
        let fin = evaluate_classifier(&model, &test).map_err(stage(seed, &label))?;
        let epochs = epochs_to_thresholds(&curve, &task.thresholds)?;
        let mut final_metrics = BTreeMap::new();
        final_metrics.insert("test_accuracy".to_string(), fin.accuracy);
        final_metrics.insert("test_loss".to_string(), fin.loss);
        for name in curve.metric_names() {
            let series = curve.metric(name)?;
            final_metrics.insert(
                name.to_string(),
                *series.last().expect("at least one epoch"),
            );
        }
        records.push(ContenderRecord {
            contender,
            seed,
            curve,
            initial_metric: initial.accuracy,
            final_metric: fin.accuracy,
            final_metrics,
            epochs_to_threshold: epochs,
            model,
        });
    }
    let threshold = task
        .thresholds
        .iter()
        .map(|t| format!("{}>={}", t.metric, t.value))
        .collect::<Vec<_>>()
        .join("&");
    Ok(SeedOutcome {
        records,
        summary: SeedSummary {
            seed,
            parent_a_metric,
            parent_b_metric: parent_b.map(|p| p.1),
            layer_emds,
            threshold,
        },
    })
}

fn run_gridworld_seed(
    spec: &ExperimentSpec,
    task: &GridworldTask,
    seed: u64,
) -> Result<SeedOutcome, PipelineError> {
    let env = |q: &[crate::train::Quadrant]| {
        GridWorld::new(task.grid, q, task.max_steps).map_err(stage(seed, "env"))
    };
    let fused_env = env(&task.fused_quadrants)?;
    let eval_seed = derive_seed(seed, &["eval"]);

    let parent =
        |role: &str, quadrants: &[crate::train::Quadrant]| -> Result<(Mlp, f64), PipelineError> {
            let e = env(quadrants)?;
            let config = crate::train::ReinforceConfig {
                seed: derive_seed(seed, &["train", role]),
                ..task.train
            };
            let (model, _) = train_reinforce(&initial_model(spec, seed, role)?, &e, &config)
                .map_err(stage(seed, role))?;
            let metric = evaluate_policy(&model, &e, task.eval_episodes, eval_seed)
                .map_err(stage(seed, role))?
                .mean_reward;
            Ok((model, metric))
        };
    let (parent_a, parent_a_metric) = parent("parent_a", &task.parent_a_quadrants)?;
    let parent_b = if spec.needs_parent_b() {
        Some(parent("parent_b", &task.parent_b_quadrants)?)
    } else {
        None
    };

    let (inits, layer_emds) = fused_inits(spec, seed, &parent_a, parent_b.as_ref().map(|p| &p.0))?;
    let config = crate::train::ReinforceConfig {
        iterations: task.retrain_iterations,
        seed: derive_seed(seed, &["retrain"]),
        ..task.train
    };

    let mut records = Vec::new();
    for (contender, init) in inits {
        let label = format!("retrain {contender}");
        let initial = evaluate_policy(&init, &fused_env, task.eval_episodes, eval_seed)
            .map_err(stage(seed, &label))?;
        let (model, curve) =
            train_reinforce(&init, &fused_env, &config).map_err(stage(seed, &label))?;
        let fin = evaluate_policy(&model, &fused_env, task.eval_episodes, eval_seed)
            .map_err(stage(seed, &label))?;
        let last = *curve
            .metric("mean_episode_reward")?
            .last()
            .expect("at least one iteration");
        let mut final_metrics = BTreeMap::new();
        final_metrics.insert("eval_mean_reward".to_string(), fin.mean_reward);
        final_metrics.insert("eval_std_reward".to_string(), fin.std_reward);
        final_metrics.insert("mean_episode_reward".to_string(), last);
        records.push(ContenderRecord {
            contender,
            seed,
            curve,
            initial_metric: initial.mean_reward,
            final_metric: fin.mean_reward,
            final_metrics,
            epochs_to_threshold: None,
            model,
        });
    }
    // threshold relative to the best contender's final curve value
    let best = records
        .iter()
        .map(|r| r.final_metrics["mean_episode_reward"])
        .fold(f64::NEG_INFINITY, f64::max);
    let value = task.threshold_fraction * best;
    for r in &mut records {
        r.epochs_to_threshold = epochs_to_threshold(&r.curve, "mean_episode_reward", value)?;
    }
    Ok(SeedOutcome {
        records,
        summary: SeedSummary {
            seed,
            parent_a_metric,
            parent_b_metric: parent_b.map(|p| p.1),
            layer_emds,
            threshold: format!("mean_episode_reward>={value}"),
        },
    })
}

fn load_classifier_data(task: &ClassifierTask) -> Result<ClassifierData, PipelineError> {
    let mut train = load_idx_dataset(&task.train_images, &task.train_labels)?;
    let mut test = load_idx_dataset(&task.test_images, &task.test_labels)?;
    if let Some(n) = task.limit {
        train = train.head(n);
        test = test.head(n);
    }
    Ok(ClassifierData { train, test })
}

/// Run every seed of the experiment, `jobs` seeds at a time. Output order
/// follows the spec's seed order regardless of `jobs`. A failing seed is
/// reported in `failures` and the others still run.
pub fn run_experiment(
    spec: &ExperimentSpec,
    jobs: usize,
) -> Result<ComparisonReport, PipelineError> {
    spec.validate()?;
    let data = match &spec.task {
        ExperimentTask::Classifier(task) => Some(load_classifier_data(task)?),
        ExperimentTask::Gridworld(_) => None,
    };
    let run_seed = |seed: u64| -> Result<SeedOutcome, PipelineError> {
        match &spec.task {
            ExperimentTask::Classifier(task) => {
                run_classifier_seed(spec, task, data.as_ref().expect("loaded above"), seed)
            }
            ExperimentTask::Gridworld(task) => run_gridworld_seed(spec, task, seed),
        }
    };

    let jobs = jobs.clamp(1, spec.seeds.len());
    let outcomes: Vec<Result<SeedOutcome, PipelineError>> = if jobs == 1 {
        spec.seeds.iter().map(|&s| run_seed(s)).collect()
    } else {
        let next = AtomicUsize::new(0);
        let mut slots: Vec<Option<Result<SeedOutcome, PipelineError>>> =
            (0..spec.seeds.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|_| {
                    scope.spawn(|| {
                        let mut done = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            if i >= spec.seeds.len() {
                                break done;
                            }
                            done.push((i, run_seed(spec.seeds[i])));
                        }
                    })
                })
                .collect();
            for h in handles {
                for (i, outcome) in h.join().expect("seed worker panicked") {
                    slots[i] = Some(outcome);
                }
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every seed ran"))
            .collect()
    };

    let (kind, primary_metric) = match spec.task {
        ExperimentTask::Classifier(_) => ("classifier", "test_accuracy"),
        ExperimentTask::Gridworld(_) => ("gridworld", "eval_mean_reward"),
    };
    let mut report = ComparisonReport {
        kind,
        primary_metric,
        records: Vec::new(),
        seeds: Vec::new(),
        failures: Vec::new(),
    };
    for (&seed, outcome) in spec.seeds.iter().zip(outcomes) {
        match outcome {
            Ok(o) => {
                report.records.extend(o.records);
                report.seeds.push(o.summary);
            }
            Err(e) => report.failures.push(SeedFailure {
                seed,
                message: e.to_string(),
            }),
        }
    }
    if report.seeds.is_empty() {
        return Err(PipelineError::AllSeedsFailed(
            report.failures[0].message.clone(),
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{EpochRecord, IterationRecord};

    fn rl_curve(values: &[f64]) -> TrainingCurve {
        TrainingCurve::Reinforce(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| IterationRecord {
                    iteration: i + 1,
                    mean_episode_reward: v,
                })
                .collect(),
        )
    }

    #[test]
    fn threshold_positions() {
        let c = rl_curve(&[0.8, 0.92, 0.96]);
        assert_eq!(
            epochs_to_threshold(&c, "mean_episode_reward", 0.95).unwrap(),
            Some(3)
        );
        assert_eq!(
            epochs_to_threshold(&c, "mean_episode_reward", 0.99).unwrap(),
            None
        );
        assert!(matches!(
            epochs_to_threshold(&c, "accuracy", 0.5),
            Err(PipelineError::Train(_))
        ));
    }

    #[test]
    fn joint_thresholds() {
        let rec = |epoch, train_accuracy, validation_accuracy| EpochRecord {
            epoch,
            train_loss: 0.1,
            train_accuracy,
            validation_loss: Some(0.1),
            validation_accuracy: Some(validation_accuracy),
        };
        let c = TrainingCurve::Classification(vec![
            rec(1, 0.96, 0.85),
            rec(2, 0.94, 0.95),
            rec(3, 0.97, 0.91),
        ]);
        let t = [
            Threshold {
                metric: "train_accuracy".into(),
                value: 0.95,
            },
            Threshold {
                metric: "validation_accuracy".into(),
                value: 0.90,
            },
        ];
        assert_eq!(epochs_to_thresholds(&c, &t).unwrap(), Some(3));
    }
}
