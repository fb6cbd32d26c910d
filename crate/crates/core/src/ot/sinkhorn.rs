//! Entropy-regularized transport (Sinkhorn-Knopp).
//!
//! [`solve_sinkhorn`] iterates on the scaling vectors `u, v` of the Gibbs kernel
//! `K = exp(-C / eps)`. For small `eps` the kernel underflows; this is detected
//! and reported as [`OtError::SinkhornUnderflow`]. [`solve_sinkhorn_log`] runs the
//! same fixed point on the dual potentials with log-sum-exp reductions and is
//! stable for any `eps > 0`.

use super::{check_problem, CostMatrix, Coupling, DiscreteDistribution, OtError, SolverTag};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Stop once every row and column sum is within `tol` of its marginal.
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            max_iter: 10_000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub coupling: Coupling,
    pub iterations: usize,
    /// Final max marginal deviation, reported whether or not it met `tol`.
    pub residual: f64,
    pub converged: bool,
}

fn validate(params: &SinkhornParams) -> Result<(), OtError> {
    if !(params.epsilon.is_finite() && params.epsilon > 0.0) {
        return Err(OtError::InvalidEpsilon(params.epsilon));
    }
    if params.max_iter == 0 {
        return Err(OtError::InvalidMaxIter);
    }
    Ok(())
}

fn finish(
    plan: Matrix,
    mu_s: &DiscreteDistribution,
    mu_t: &DiscreteDistribution,
    params: &SinkhornParams,
    iterations: usize,
) -> SinkhornSolution {
    let coupling = Coupling::solved(plan, mu_s, mu_t, SolverTag::Sinkhorn, params.tol);
    let residual = coupling.marginal_residual();
    SinkhornSolution {
        coupling,
        iterations,
        residual,
        converged: residual <= params.tol,
    }
}

/// Plain sweeps before a stalled run switches to Newton steps on the dual.
const NEWTON_AFTER: usize = 200;

/// Sinkhorn-Knopp in the scaling domain.
///
/// Runs that have not converged after a short warm-up continue on the dual
/// potentials (see [`solve_sinkhorn_log`]).
pub fn solve_sinkhorn(
    cost: &CostMatrix,
    mu_s: &DiscreteDistribution,
    mu_t: &DiscreteDistribution,
    params: SinkhornParams,
) -> Result<SinkhornSolution, OtError> {
    check_problem(cost, mu_s, mu_t)?;
    validate(&params)?;
    let (a, b) = (mu_s.masses(), mu_t.masses());
    let (m, n) = (a.len(), b.len());
    let eps = params.epsilon;
    let kernel = cost.entries().map(|c| (-c / eps).exp());

    let underflow = |iteration| OtError::SinkhornUnderflow {
        epsilon: eps,
        iteration,
    };
    // a row or column of the kernel that vanished entirely can never carry mass
    if kernel
        .row_sums()
        .iter()
        .zip(a)
        .any(|(s, &ai)| *s == 0.0 && ai > 0.0)
        || kernel
            .col_sums()
            .iter()
            .zip(b)
            .any(|(s, &bj)| *s == 0.0 && bj > 0.0)
    {
        return Err(underflow(0));
    }

    let mut u = vec![1.0f64; m];
    let mut v = vec![1.0f64; n];
    let mut kv = vec![0.0f64; m];
    let mut ktu = vec![0.0f64; n];
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=params.max_iter.min(NEWTON_AFTER) {
        iterations = it;
        for i in 0..m {
            kv[i] = kernel.row(i).iter().zip(&v).map(|(k, vj)| k * vj).sum();
            u[i] = if a[i] == 0.0 { 0.0 } else { a[i] / kv[i] };
            if !u[i].is_finite() {
                return Err(underflow(it));
            }
        }
        ktu.fill(0.0);
        for i in 0..m {
            for (acc, k) in ktu.iter_mut().zip(kernel.row(i)) {
                *acc += k * u[i];
            }
        }
        for j in 0..n {
            v[j] = if b[j] == 0.0 { 0.0 } else { b[j] / ktu[j] };
            if !v[j].is_finite() {
                return Err(underflow(it));
            }
        }
        // columns are exact after the v-update; rows measure convergence
        let row_residual = (0..m)
            .map(|i| {
                let s: f64 = kernel.row(i).iter().zip(&v).map(|(k, vj)| k * vj).sum();
                (u[i] * s - a[i]).abs()
            })
            .fold(0.0, f64::max);
        if row_residual <= params.tol {
            converged = true;
            break;
        }
    }
    if !converged && iterations < params.max_iter {
        let mut dual = Dual {
            cost: cost.entries(),
            a,
            b,
            eps,
            f: u.iter().map(|x| eps * x.ln()).collect(),
            g: v.iter().map(|x| eps * x.ln()).collect(),
        };
        dual.finish_iterations(&mut iterations, &params);
        return Ok(finish(dual.plan(), mu_s, mu_t, &params, iterations));
    }
    let plan = Matrix::from_fn(m, n, |i, j| u[i] * kernel[(i, j)] * v[j]);
    if !plan.is_finite() {
        return Err(underflow(iterations));
    }
    Ok(finish(plan, mu_s, mu_t, &params, iterations))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Dual potentials `f, g`; the plan is `exp((f_i + g_j - C_ij) / eps)`.
struct Dual<'a> {
    cost: &'a Matrix,
    a: &'a [f64],
    b: &'a [f64],
    eps: f64,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl Dual<'_> {
    fn plan(&self) -> Matrix {
        let (m, n) = self.cost.shape();
        Matrix::from_fn(m, n, |i, j| {
            let x = ((self.f[i] + self.g[j] - self.cost[(i, j)]) / self.eps).exp();
            if x.is_nan() {
                0.0
            } else {
                x
            }
        })
    }

    fn residual(&self, plan: &Matrix) -> f64 {
        let rows = plan
            .row_sums()
            .into_iter()
            .zip(self.a)
            .map(|(s, m)| (s - m).abs());
        let cols = plan
            .col_sums()
            .into_iter()
            .zip(self.b)
            .map(|(s, m)| (s - m).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    /// Log-domain Sinkhorn sweeps. Returns `true` once the row residual meets `tol`.
    fn sweeps(&mut self, budget: usize, tol: f64, iterations: &mut usize) -> bool {
        let c = self.cost;
        let (m, n) = c.shape();
        let eps = self.eps;
        for _ in 0..budget {
            *iterations += 1;
            for i in 0..m {
                let row = c.row(i);
                let g = &self.g;
                self.f[i] =
                    eps * self.a[i].ln() - eps * log_sum_exp((0..n).map(|j| (g[j] - row[j]) / eps));
            }
            for j in 0..n {
                let f = &self.f;
                self.g[j] = eps * self.b[j].ln()
                    - eps * log_sum_exp((0..m).map(|i| (f[i] - c[(i, j)]) / eps));
            }
            let row_residual = (0..m)
                .map(|i| {
                    let row = c.row(i);
                    let s: f64 = (0..n)
                        .map(|j| ((self.f[i] + self.g[j] - row[j]) / eps).exp())
                        .sum();
                    (s - self.a[i]).abs()
                })
                .fold(0.0, f64::max);
            if row_residual <= tol {
                return true;
            }
        }
        false
    }

    /// Damped Newton ascent on the dual with the last column potential pinned.
    ///
    /// Returns `Some(converged)` or `None` when a step cannot make progress
    /// (singular Hessian, zero masses), leaving the potentials at the best point.
    fn newton(&mut self, budget: usize, tol: f64, iterations: &mut usize) -> Option<bool> {
        if self.a.iter().chain(self.b).any(|&x| x == 0.0) {
            return None;
        }
        let (m, n) = self.cost.shape();
        let k = m + n - 1;
        let mut plan = self.plan();
        let mut residual = self.residual(&plan);
        for _ in 0..budget {
            if residual <= tol {
                return Some(true);
            }
            *iterations += 1;
            let (rows, cols) = (plan.row_sums(), plan.col_sums());
            let mut hessian = nalgebra::DMatrix::<f64>::zeros(k, k);
            let mut rhs = nalgebra::DVector::<f64>::zeros(k);
            for i in 0..m {
                hessian[(i, i)] = rows[i];
                rhs[i] = self.a[i] - rows[i];
            }
            for j in 0..n - 1 {
                hessian[(m + j, m + j)] = cols[j];
                rhs[m + j] = self.b[j] - cols[j];
                for i in 0..m {
                    hessian[(i, m + j)] = plan[(i, j)];
                    hessian[(m + j, i)] = plan[(i, j)];
                }
            }
            let step = hessian.cholesky()?.solve(&rhs) * self.eps;
            if !step.iter().all(|x| x.is_finite()) {
                return None;
            }
            let mut t = 1.0;
            loop {
                let trial = Dual {
                    f: (0..m).map(|i| self.f[i] + t * step[i]).collect(),
                    g: (0..n)
                        .map(|j| self.g[j] + if j + 1 < n { t * step[m + j] } else { 0.0 })
                        .collect(),
                    ..*self
                };
                let trial_plan = trial.plan();
                let trial_residual = trial.residual(&trial_plan);
                if trial_residual < residual {
                    (self.f, self.g, plan, residual) =
                        (trial.f, trial.g, trial_plan, trial_residual);
                    break;
                }
                t *= 0.5;
                if t < 1e-6 {
                    return None;
                }
            }
        }
        Some(residual <= tol)
    }

    /// Spend the rest of the iteration budget: Newton first, plain sweeps if it stalls.
    fn finish_iterations(&mut self, iterations: &mut usize, params: &SinkhornParams) {
        let remaining = params.max_iter - *iterations;
        if let Some(true) = self.newton(remaining, params.tol, iterations) {
            return;
        }
        let remaining = params.max_iter - *iterations;
        self.sweeps(remaining, params.tol, iterations);
    }
}

/// Sinkhorn iterations on the dual potentials `f, g` in the log domain.
///
/// Stable for any `eps > 0`. Small `eps` makes the plain fixed point mix very
/// slowly, so a run still above `tol` after a short warm-up finishes with damped
/// Newton steps on the same dual (each step counts as one iteration).
pub fn solve_sinkhorn_log(
    cost: &CostMatrix,
    mu_s: &DiscreteDistribution,
    mu_t: &DiscreteDistribution,
    params: SinkhornParams,
) -> Result<SinkhornSolution, OtError> {
    check_problem(cost, mu_s, mu_t)?;
    validate(&params)?;
    let (m, n) = cost.entries().shape();
    let mut dual = Dual {
        cost: cost.entries(),
        a: mu_s.masses(),
        b: mu_t.masses(),
        eps: params.epsilon,
        f: vec![0.0; m],
        g: vec![0.0; n],
    };
    let mut iterations = 0;
    let converged = dual.sweeps(
        params.max_iter.min(NEWTON_AFTER),
        params.tol,
        &mut iterations,
    );
    if !converged && iterations < params.max_iter {
        dual.finish_iterations(&mut iterations, &params);
    }
    Ok(finish(dual.plan(), mu_s, mu_t, &params, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::solve_exact;

    fn two_by_two() -> CostMatrix {
        CostMatrix::from_entries(Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap()).unwrap()
    }

    #[test]
    fn approaches_the_exact_plan_for_small_epsilon() {
        let u = DiscreteDistribution::uniform(2);
        let params = SinkhornParams {
            epsilon: 0.01,
            ..Default::default()
        };
        for sol in [
            solve_sinkhorn(&two_by_two(), &u, &u, params).unwrap(),
            solve_sinkhorn_log(&two_by_two(), &u, &u, params).unwrap(),
        ] {
            assert!(sol.converged);
            let expect = [[0.5, 0.0], [0.0, 0.5]];
            for i in 0..2 {
                for j in 0..2 {
                    assert!((sol.coupling.plan()[(i, j)] - expect[i][j]).abs() < 1e-3);
                    assert!(sol.coupling.plan()[(i, j)] > 0.0);
                }
            }
            assert!(sol.residual <= params.tol);
        }
    }

    #[test]
    fn scaling_domain_underflow_is_reported_and_log_domain_recovers() {
        let u = DiscreteDistribution::uniform(2);
        let cost = CostMatrix::from_entries(Matrix::from_rows(&[[5.0, 6.0], [6.0, 5.0]]).unwrap())
            .unwrap();
        let params = SinkhornParams {
            epsilon: 1e-3,
            ..Default::default()
        };
        let err = solve_sinkhorn(&cost, &u, &u, params).unwrap_err();
        assert!(matches!(err, OtError::SinkhornUnderflow { .. }));
        assert!(err.to_string().contains("log-domain"));
        let sol = solve_sinkhorn_log(&cost, &u, &u, params).unwrap();
        assert!(sol.converged);
        assert!((sol.coupling.transport_cost(&cost) - 5.0).abs() < 1e-6);
    }

    #[test]
    fn objective_is_never_below_exact() {
        let cost = CostMatrix::from_entries(
            Matrix::from_rows(&[[0.3, 0.9, 0.1], [0.5, 0.2, 0.8], [0.7, 0.4, 0.6]]).unwrap(),
        )
        .unwrap();
        let u = DiscreteDistribution::uniform(3);
        let exact = solve_exact(&cost, &u, &u).unwrap().transport_cost(&cost);
        let mut previous = f64::INFINITY;
        for eps in [1.0, 0.1, 0.01] {
            let sol = solve_sinkhorn_log(
                &cost,
                &u,
                &u,
                SinkhornParams {
                    epsilon: eps,
                    max_iter: 100_000,
                    tol: 1e-12,
                },
            )
            .unwrap();
            let obj = sol.coupling.transport_cost(&cost);
            assert!(obj >= exact - 1e-12);
            assert!(obj <= previous + 1e-12);
            previous = obj;
        }
    }

    #[test]
    fn non_converged_runs_report_their_residual() {
        let u = DiscreteDistribution::uniform(2);
        let a = DiscreteDistribution::new(vec![0.9, 0.1]).unwrap();
        let params = SinkhornParams {
            epsilon: 0.01,
            max_iter: 1,
            tol: 1e-14,
        };
        let sol = solve_sinkhorn_log(&two_by_two(), &a, &u, params).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(!sol.converged);
        assert!(sol.residual > params.tol);
    }

    #[test]
    fn small_epsilon_converges_within_the_default_budget() {
        let mut rng = crate::rng::seeded(5);
        let u = DiscreteDistribution::uniform(8);
        let params = SinkhornParams::default();
        for _ in 0..10 {
            use rand::Rng;
            let cost =
                CostMatrix::from_entries(Matrix::from_fn(8, 8, |_, _| rng.gen_range(0.0..1.0)))
                    .unwrap();
            for sol in [
                solve_sinkhorn(&cost, &u, &u, params).unwrap(),
                solve_sinkhorn_log(&cost, &u, &u, params).unwrap(),
            ] {
                assert!(sol.converged, "residual {}", sol.residual);
                assert!(sol.iterations < 1000);
            }
        }
    }

    #[test]
    fn parameter_validation() {
        let u = DiscreteDistribution::uniform(2);
        let bad_eps = SinkhornParams {
            epsilon: 0.0,
            ..Default::default()
        };
        assert_eq!(
            solve_sinkhorn(&two_by_two(), &u, &u, bad_eps).unwrap_err(),
            OtError::InvalidEpsilon(0.0)
        );
        let bad_iter = SinkhornParams {
            max_iter: 0,
            ..Default::default()
        };
        assert_eq!(
            solve_sinkhorn_log(&two_by_two(), &u, &u, bad_iter).unwrap_err(),
            OtError::InvalidMaxIter
        );
    }
}
