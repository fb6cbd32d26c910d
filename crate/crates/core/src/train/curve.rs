use std::io::Write;

use serde::{Deserialize, Serialize};

use super::TrainError;

/// Metrics recorded after one classifier epoch. Train metrics are running
/// averages over the epoch's minibatches; validation metrics are computed on
/// the held-out split once the epoch ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_loss: Option<f64>,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_episode_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainingCurve {
    Classification(Vec<EpochRecord>),
    Reinforce(Vec<IterationRecord>),
}

pub const CLASSIFICATION_METRICS: [&str; 4] = [
    "train_loss",
    "train_accuracy",
    "validation_loss",
    "validation_accuracy",
];
pub const REINFORCE_METRICS: [&str; 1] = ["mean_episode_reward"];

impl TrainingCurve {
    pub fn len(&self) -> usize {
        match self {
            TrainingCurve::Classification(r) => r.len(),
            TrainingCurve::Reinforce(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn metric_names(&self) -> &'static [&'static str] {
        match self {
            TrainingCurve::Classification(_) => &CLASSIFICATION_METRICS,
            TrainingCurve::Reinforce(_) => &REINFORCE_METRICS,
        }
    }

    /// Values of one named metric, one per record. Missing validation values are NaN.
    pub fn metric(&self, name: &str) -> Result<Vec<f64>, TrainError> {
        let unknown = || TrainError::UnknownMetric(name.to_string());
        match self {
            TrainingCurve::Classification(records) => {
                let pick: fn(&EpochRecord) -> f64 = match name {
                    "train_loss" => |r| r.train_loss,
                    "train_accuracy" => |r| r.train_accuracy,
                    "validation_loss" => |r| r.validation_loss.unwrap_or(f64::NAN),
                    "validation_accuracy" => |r| r.validation_accuracy.unwrap_or(f64::NAN),
                    _ => return Err(unknown()),
                };
                Ok(records.iter().map(pick).collect())
            }
            TrainingCurve::Reinforce(records) => match name {
                "mean_episode_reward" => {
                    Ok(records.iter().map(|r| r.mean_episode_reward).collect())
                }
                _ => Err(unknown()),
            },
        }
    }

    /// CSV with a header row: `epoch,train_loss,train_accuracy,validation_loss,validation_accuracy`
    /// or `iteration,mean_episode_reward`. Missing validation values are empty cells.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        match self {
            TrainingCurve::Classification(records) => {
                w.write_record([
                    "epoch",
                    "train_loss",
                    "train_accuracy",
                    "validation_loss",
                    "validation_accuracy",
                ])?;
                for r in records {
                    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                    w.write_record([
                        r.epoch.to_string(),
                        r.train_loss.to_string(),
                        r.train_accuracy.to_string(),
                        opt(r.validation_loss),
                        opt(r.validation_accuracy),
                    ])?;
                }
            }
            TrainingCurve::Reinforce(records) => {
                w.write_record(["iteration", "mean_episode_reward"])?;
                for r in records {
                    w.write_record([r.iteration.to_string(), r.mean_episode_reward.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
