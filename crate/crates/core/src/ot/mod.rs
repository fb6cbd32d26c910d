//! Discrete optimal transport between finitely supported distributions.
//!
//! The exact solver returns a globally optimal coupling. Square problems with
//! uniform masses are solved as linear assignment problems, which always yield a
//! scaled permutation matrix; everything else goes through a transportation
//! simplex. An entropy-regularized Sinkhorn solver (standard and log-domain) is
//! provided as an approximate alternative.

mod assignment;
mod cost;
mod permutation;
mod sinkhorn;
mod transport;

pub use assignment::solve_assignment;
pub use cost::{cost_matrix, CostMatrix, GroundMetric};
pub use permutation::{coupling_to_permutation, coupling_to_permutation_repaired, Permutation};
pub use sinkhorn::{solve_sinkhorn, solve_sinkhorn_log, SinkhornParams, SinkhornSolution};
pub use transport::solve_transport;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

/// Marginal tolerance guaranteed by [`solve_exact`].
pub const EXACT_MARGINAL_TOL: f64 = 1e-10;
/// Largest allowed gap between total source and total target mass.
pub const FEASIBILITY_TOL: f64 = 1e-9;
const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OtError {
    #[error("dimension mismatch: source vectors have dimension {source_dim}, target vectors have dimension {target_dim}")]
    DimensionMismatch {
        source_dim: usize,
        target_dim: usize,
    },
    #[error("{set} vector {index} has dimension {found}, expected {expected}")]
    RaggedVectors {
        set: &'static str,
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("{set} vector {index} contains a NaN or infinite component")]
    NonFiniteInput { set: &'static str, index: usize },
    #[error("cost entry ({row}, {col}) is negative or not finite: {value}")]
    InvalidCost { row: usize, col: usize, value: f64 },
    #[error("empty support")]
    EmptySupport,
    #[error("mass {index} is negative or not finite: {value}")]
    InvalidMass { index: usize, value: f64 },
    #[error("masses sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("cost matrix is {found_rows}x{found_cols} but the distributions have support sizes {rows} and {cols}")]
    ShapeMismatch {
        rows: usize,
        cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error(
        "infeasible marginals: source mass {source_total} differs from target mass {target_total}"
    )]
    InfeasibleMarginals {
        source_total: f64,
        target_total: f64,
    },
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("max_iter must be at least 1")]
    InvalidMaxIter,
    #[error("sinkhorn scaling underflowed at epsilon {epsilon} (iteration {iteration}); retry with the log-domain solver")]
    SinkhornUnderflow { epsilon: f64, iteration: usize },
    #[error("coupling has zero total mass")]
    ZeroMass,
    #[error("coupling is {rows}x{cols}, expected a square plan")]
    NotSquare { rows: usize, cols: usize },
    #[error("argmax collision: columns {first_col} and {second_col} both select source row {row}")]
    ArgmaxCollision {
        row: usize,
        first_col: usize,
        second_col: usize,
    },
    #[error("exact coupling is not a scaled permutation matrix (deviation {deviation})")]
    NotAVertex { deviation: f64 },
    #[error("mapping is not a bijection on 0..{len}: {detail}")]
    NotABijection { len: usize, detail: String },
    #[error("permutation sizes differ: {0} vs {1}")]
    PermutationSizeMismatch(usize, usize),
    #[error("transportation simplex did not terminate within {0} pivots")]
    PivotLimit(usize),
}

/// A probability vector over a finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    masses: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(masses: Vec<f64>) -> Result<Self, OtError> {
        if masses.is_empty() {
            return Err(OtError::EmptySupport);
        }
        if let Some((index, &value)) = masses
            .iter()
            .enumerate()
            .find(|(_, m)| !m.is_finite() || **m < 0.0)
        {
            return Err(OtError::InvalidMass { index, value });
        }
        let sum: f64 = masses.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(OtError::NotNormalized { sum });
        }
        Ok(Self { masses })
    }

    /// `1/n` on each of `n` points. Panics if `n == 0`.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution needs a non-empty support");
        Self {
            masses: vec![1.0 / n as f64; n],
        }
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn support_size(&self) -> usize {
        self.masses.len()
    }

    pub fn is_uniform(&self) -> bool {
        self.masses.iter().all(|&m| m == self.masses[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverTag {
    Exact,
    Sinkhorn,
    /// Built directly from a user-supplied plan.
    Given,
}

/// A transport plan together with the marginals it was solved for.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    plan: Matrix,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
    solver: SolverTag,
    tolerance: f64,
}

impl Coupling {
    pub(crate) fn solved(
        plan: Matrix,
        mu_s: &DiscreteDistribution,
        mu_t: &DiscreteDistribution,
        solver: SolverTag,
        tolerance: f64,
    ) -> Self {
        Self {
            plan,
            row_marginal: mu_s.masses().to_vec(),
            col_marginal: mu_t.masses().to_vec(),
            solver,
            tolerance,
        }
    }

    /// Wrap an arbitrary non-negative plan; its own row and column sums become the marginals.
    pub fn from_plan(plan: Matrix) -> Result<Self, OtError> {
        for i in 0..plan.rows() {
            for j in 0..plan.cols() {
                let value = plan[(i, j)];
                if !value.is_finite() || value < 0.0 {
                    return Err(OtError::InvalidMass {
                        index: i * plan.cols() + j,
                        value,
                    });
                }
            }
        }
        let row_marginal = plan.row_sums();
        let col_marginal = plan.col_sums();
        Ok(Self {
            plan,
            row_marginal,
            col_marginal,
            solver: SolverTag::Given,
            tolerance: 0.0,
        })
    }

    pub fn plan(&self) -> &Matrix {
        &self.plan
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    pub fn solver(&self) -> SolverTag {
        self.solver
    }

    /// The marginal tolerance this coupling is guaranteed to satisfy.
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Largest absolute deviation of any row or column sum from its marginal.
    pub fn marginal_residual(&self) -> f64 {
        let (row_sums, col_sums) = (self.plan.row_sums(), self.plan.col_sums());
        let rows = row_sums
            .iter()
            .zip(&self.row_marginal)
            .map(|(s, m)| (s - m).abs());
        let cols = col_sums
            .iter()
            .zip(&self.col_marginal)
            .map(|(s, m)| (s - m).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    /// Transport cost `sum_ij plan_ij * cost_ij` (no normalization).
    pub fn transport_cost(&self, cost: &CostMatrix) -> f64 {
        let c = cost.entries();
        let mut total = 0.0;
        for i in 0..self.plan.rows() {
            for (p, d) in self.plan.row(i).iter().zip(c.row(i)) {
                total += p * d;
            }
        }
        total
    }
}

fn check_problem(
    cost: &CostMatrix,
    mu_s: &DiscreteDistribution,
    mu_t: &DiscreteDistribution,
) -> Result<(), OtError> {
    let (rows, cols) = (mu_s.support_size(), mu_t.support_size());
    if cost.entries().shape() != (rows, cols) {
        return Err(OtError::ShapeMismatch {
            rows,
            cols,
            found_rows: cost.entries().rows(),
            found_cols: cost.entries().cols(),
        });
    }
    let source_total: f64 = mu_s.masses().iter().sum();
    let target_total: f64 = mu_t.masses().iter().sum();
    if (source_total - target_total).abs() > FEASIBILITY_TOL {
        return Err(OtError::InfeasibleMarginals {
            source_total,
            target_total,
        });
    }
    Ok(())
}

/// Globally optimal coupling between `mu_s` (rows) and `mu_t` (columns).
///
/// Equal support sizes with uniform masses are solved as an assignment problem and
/// return `(1/N) * Π` for a permutation matrix `Π`. Ties between optimal
/// assignments resolve deterministically in scan order. A `1 x 1` problem returns
/// `[[1.0]]` directly.
pub fn solve_exact(
    cost: &CostMatrix,
    mu_s: &DiscreteDistribution,
    mu_t: &DiscreteDistribution,
) -> Result<Coupling, OtError> {
    check_problem(cost, mu_s, mu_t)?;
    let (m, n) = (mu_s.support_size(), mu_t.support_size());
    let plan = if m == 1 && n == 1 {
        Matrix::filled(1, 1, 1.0)
    } else if m == n && mu_s.is_uniform() && mu_t.is_uniform() {
        let assignment = solve_assignment(cost.entries());
        let mass = 1.0 / n as f64;
        let mut plan = Matrix::zeros(n, n);
        for (i, &j) in assignment.iter().enumerate() {
            plan[(i, j)] = mass;
        }
        plan
    } else {
        solve_transport(cost.entries(), mu_s.masses(), mu_t.masses())?
    };
    Ok(Coupling::solved(
        plan,
        mu_s,
        mu_t,
        SolverTag::Exact,
        EXACT_MARGINAL_TOL,
    ))
}

/// Earth Mover's Distance of a coupling: mass-weighted mean ground distance.
pub fn emd(coupling: &Coupling, cost: &CostMatrix) -> Result<f64, OtError> {
    let (rows, cols) = coupling.plan().shape();
    if cost.entries().shape() != (rows, cols) {
        return Err(OtError::ShapeMismatch {
            rows,
            cols,
            found_rows: cost.entries().rows(),
            found_cols: cost.entries().cols(),
        });
    }
    let mass = coupling.plan().sum();
    if mass <= 0.0 {
        return Err(OtError::ZeroMass);
    }
    Ok(coupling.transport_cost(cost) / mass)
}
