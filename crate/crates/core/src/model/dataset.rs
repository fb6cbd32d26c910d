use std::collections::BTreeSet;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("{inputs} inputs but {labels} labels")]
    LengthMismatch { inputs: usize, labels: usize },
    #[error("label {label} at index {index} is not below num_classes = {num_classes}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("input {index} has dimension {found}, expected {expected}")]
    RaggedInputs {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("input {index} contains a NaN or infinite value")]
    NonFiniteInput { index: usize },
    #[error("the set of positive digits is empty")]
    EmptyPositiveSet,
    #[error("positive digit {digit} is not below num_classes = {num_classes}")]
    PositiveOutOfRange { digit: usize, num_classes: usize },
    #[error("num_classes must be positive")]
    NoClasses,
    #[error("index {index} out of range for dataset of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Input vectors with class labels. Rows are reference counted so subsets and
/// relabelled copies share storage.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec<Arc<[f64]>>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DatasetError> {
        Self::from_shared(
            inputs.into_iter().map(Arc::from).collect(),
            labels,
            num_classes,
        )
    }

    pub(crate) fn from_shared(
        inputs: Vec<Arc<[f64]>>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DatasetError> {
        if num_classes == 0 {
            return Err(DatasetError::NoClasses);
        }
        if inputs.len() != labels.len() {
            return Err(DatasetError::LengthMismatch {
                inputs: inputs.len(),
                labels: labels.len(),
            });
        }
        if let Some(first) = inputs.first() {
            let expected = first.len();
            for (index, x) in inputs.iter().enumerate() {
                if x.len() != expected {
                    return Err(DatasetError::RaggedInputs {
                        index,
                        expected,
                        found: x.len(),
                    });
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(DatasetError::NonFiniteInput { index });
                }
            }
        }
        for (index, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(DatasetError::LabelOutOfRange {
                    index,
                    label,
                    num_classes,
                });
            }
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Input dimension, or 0 for an empty dataset.
    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.len())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input(&self, index: usize) -> &[f64] {
        &self.inputs[index]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.inputs.iter().map(|x| &x[..])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order. Storage is shared with `self`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DatasetError> {
        let len = self.len();
        let mut inputs = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &index in indices {
            if index >= len {
                return Err(DatasetError::IndexOutOfRange { index, len });
            }
            inputs.push(Arc::clone(&self.inputs[index]));
            labels.push(self.labels[index]);
        }
        Ok(Self {
            inputs,
            labels,
            num_classes: self.num_classes,
        })
    }

    /// First `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            inputs: self.inputs[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }

    #[cfg(test)]
    pub(crate) fn shared_input(&self, index: usize) -> &Arc<[f64]> {
        &self.inputs[index]
    }
}

/// Collapse labels to two classes: 0 ("yes") when the original label is in
/// `positive_digits`, 1 ("no") otherwise. Inputs are shared, not copied.
pub fn relabel_binary(
    dataset: &LabeledDataset,
    positive_digits: &[usize],
) -> Result<LabeledDataset, DatasetError> {
    if positive_digits.is_empty() {
        return Err(DatasetError::EmptyPositiveSet);
    }
    let positives: BTreeSet<usize> = positive_digits.iter().copied().collect();
    if let Some(&digit) = positives.iter().find(|&&d| d >= dataset.num_classes) {
        return Err(DatasetError::PositiveOutOfRange {
            digit,
            num_classes: dataset.num_classes,
        });
    }
    let labels = dataset
        .labels
        .iter()
        .map(|l| if positives.contains(l) { 0 } else { 1 })
        .collect();
    Ok(LabeledDataset {
        inputs: dataset.inputs.clone(),
        labels,
        num_classes: 2,
    })
}
