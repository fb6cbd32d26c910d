use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{solve_assignment, Coupling, OtError, SolverTag};
use crate::matrix::Matrix;

/// A bijection on `0..n`. `mapping[j]` is the index of the source item placed at
/// target position `j`, so applying it to a list `x` gives `y[j] = x[mapping[j]]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self, OtError> {
        let len = mapping.len();
        let mut seen = vec![false; len];
        for (pos, &idx) in mapping.iter().enumerate() {
            if idx >= len {
                return Err(OtError::NotABijection {
                    len,
                    detail: format!("entry {pos} is {idx}"),
                });
            }
            if std::mem::replace(&mut seen[idx], true) {
                return Err(OtError::NotABijection {
                    len,
                    detail: format!("index {idx} appears twice"),
                });
            }
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        Self { mapping }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(j, &i)| i == j)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (j, &i) in self.mapping.iter().enumerate() {
            inv[i] = j;
        }
        Self { mapping: inv }
    }

    /// The permutation equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &Permutation) -> Result<Self, OtError> {
        if self.len() != next.len() {
            return Err(OtError::PermutationSizeMismatch(self.len(), next.len()));
        }
        Ok(Self {
            mapping: next.mapping.iter().map(|&k| self.mapping[k]).collect(),
        })
    }

    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        assert_eq!(items.len(), self.len(), "permutation size mismatch");
        self.mapping.iter().map(|&i| items[i].clone()).collect()
    }

    /// `N x N` 0/1 matrix with a one at `(mapping[j], j)`.
    pub fn to_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), self.len());
        for (j, &i) in self.mapping.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = OtError;

    fn try_from(mapping: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(mapping)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.mapping
    }
}

fn check_square(coupling: &Coupling) -> Result<usize, OtError> {
    let (rows, cols) = coupling.plan().shape();
    if rows != cols {
        return Err(OtError::NotSquare { rows, cols });
    }
    Ok(rows)
}

fn column_argmax(plan: &Matrix, j: usize) -> usize {
    let mut best = 0;
    for i in 1..plan.rows() {
        if plan[(i, j)] > plan[(best, j)] {
            best = i;
        }
    }
    best
}

fn greedy(plan: &Matrix) -> Result<Vec<usize>, OtError> {
    let n = plan.rows();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut mapping = Vec::with_capacity(n);
    for j in 0..n {
        let i = column_argmax(plan, j);
        if let Some(first_col) = owner[i] {
            return Err(OtError::ArgmaxCollision {
                row: i,
                first_col,
                second_col: j,
            });
        }
        owner[i] = Some(j);
        mapping.push(i);
    }
    Ok(mapping)
}

/// Hard alignment from a square coupling: `mapping[j] = argmax_i plan[i][j]`.
///
/// Collisions are errors. Couplings from the exact solver are also checked to be
/// scaled permutation matrices (within `1e-6` after multiplying by `N`).
pub fn coupling_to_permutation(coupling: &Coupling) -> Result<Permutation, OtError> {
    let n = check_square(coupling)?;
    let perm = Permutation {
        mapping: greedy(coupling.plan())?,
    };
    if coupling.solver() == SolverTag::Exact {
        let scaled = coupling.plan().map(|p| p * n as f64);
        let deviation = scaled.max_abs_diff(&perm.to_matrix());
        if deviation > 1e-6 {
            return Err(OtError::NotAVertex { deviation });
        }
    }
    Ok(perm)
}

/// Like [`coupling_to_permutation`], but resolves argmax collisions (blurred or
/// tied plans) with an assignment on `-ln(plan)`.
pub fn coupling_to_permutation_repaired(coupling: &Coupling) -> Result<Permutation, OtError> {
    let n = check_square(coupling)?;
    match greedy(coupling.plan()) {
        Ok(mapping) => Ok(Permutation { mapping }),
        Err(OtError::ArgmaxCollision { .. }) => {
            let cost = coupling.plan().map(|p| -(p.max(f64::MIN_POSITIVE)).ln());
            // assignment is row -> column; invert to column -> row
            let row_to_col = solve_assignment(&cost);
            let mut mapping = vec![0; n];
            for (i, &j) in row_to_col.iter().enumerate() {
                mapping[j] = i;
            }
            Ok(Permutation { mapping })
        }
        Err(e) => Err(e),
    }
}
