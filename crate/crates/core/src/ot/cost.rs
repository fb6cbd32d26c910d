use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::OtError;
use crate::matrix::Matrix;

/// Ground distance between two vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundMetric {
    #[default]
    Euclidean,
    SquaredEuclidean,
    /// `1 - cos(a, b)`, in `[0, 2]`. A zero vector is at distance 1 from any
    /// non-zero vector and 0 from another zero vector.
    Cosine,
}

impl GroundMetric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            GroundMetric::Euclidean => squared_distance(a, b).sqrt(),
            GroundMetric::SquaredEuclidean => squared_distance(a, b),
            GroundMetric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                match (na == 0.0, nb == 0.0) {
                    (true, true) => 0.0,
                    (true, false) | (false, true) => 1.0,
                    _ => (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0),
                }
            }
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl fmt::Display for GroundMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroundMetric::Euclidean => "euclidean",
            GroundMetric::SquaredEuclidean => "squared-euclidean",
            GroundMetric::Cosine => "cosine",
        })
    }
}

impl FromStr for GroundMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(GroundMetric::Euclidean),
            "squared-euclidean" | "sqeuclidean" => Ok(GroundMetric::SquaredEuclidean),
            "cosine" => Ok(GroundMetric::Cosine),
            other => Err(format!(
                "unknown metric `{other}` (expected euclidean, squared-euclidean or cosine)"
            )),
        }
    }
}

/// Pairwise ground distances, rows indexed by source points and columns by target points.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Matrix,
    metric: Option<GroundMetric>,
}

impl CostMatrix {
    /// Wrap precomputed distances. Entries must be finite and non-negative.
    pub fn from_entries(entries: Matrix) -> Result<Self, OtError> {
        for row in 0..entries.rows() {
            for (col, &value) in entries.row(row).iter().enumerate() {
                if !value.is_finite() || value < 0.0 {
                    return Err(OtError::InvalidCost { row, col, value });
                }
            }
        }
        Ok(Self {
            entries,
            metric: None,
        })
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    /// The metric that produced the entries, `None` for user-supplied matrices.
    pub fn metric(&self) -> Option<GroundMetric> {
        self.metric
    }

    /// Multiply every entry by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self, OtError> {
        let mut out = Self::from_entries(self.entries.map(|v| v * factor))?;
        out.metric = self.metric;
        Ok(out)
    }
}

fn check_vectors<V: AsRef<[f64]>>(
    set: &'static str,
    vectors: &[V],
) -> Result<Option<usize>, OtError> {
    let Some(first) = vectors.first() else {
        return Ok(None);
    };
    let expected = first.as_ref().len();
    for (index, v) in vectors.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != expected {
            return Err(OtError::RaggedVectors {
                set,
                index,
                expected,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(OtError::NonFiniteInput { set, index });
        }
    }
    Ok(Some(expected))
}

/// `entries[i][j] = metric(source[i], target[j])`.
pub fn cost_matrix<S: AsRef<[f64]>, T: AsRef<[f64]>>(
    source: &[S],
    target: &[T],
    metric: GroundMetric,
) -> Result<CostMatrix, OtError> {
    let source_dim = check_vectors("source", source)?;
    let target_dim = check_vectors("target", target)?;
    if let (Some(source_dim), Some(target_dim)) = (source_dim, target_dim) {
        if source_dim != target_dim {
            return Err(OtError::DimensionMismatch {
                source_dim,
                target_dim,
            });
        }
    }
    let entries = Matrix::from_fn(source.len(), target.len(), |i, j| {
        metric.distance(source[i].as_ref(), target[j].as_ref())
    });
    Ok(CostMatrix {
        entries,
        metric: Some(metric),
    })
}
