use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::log_sum_exp;
use super::types::{vec_dims_check, CostMatrix, Marginals, ScalingVectors, TransportPlan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stopping threshold on `max(row L1, column L1) / total mass`.
    pub tolerance: f64,
    pub log_domain: bool,
    /// Fixed iteration count for differentiable (unrolled) solves.
    pub unroll_depth: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-9,
            log_domain: true,
            unroll_depth: 50,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput(
                "solver tolerance must be positive".into(),
            ));
        }
        if self.unroll_depth == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidInput(
                "iteration counts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornOutput {
    pub plan: TransportPlan,
    pub scaling: ScalingVectors,
    pub iterations: usize,
    /// `max(row L1, column L1) / total mass` at termination.
    pub residual: f64,
}

/// Solves the entropic transport problem by alternating diagonal scaling.
///
/// Starts from `pi = 1`, then alternates the column update
/// `omega = nu / (K^T pi)` and the row update `pi = mu / (K omega)` until the
/// relative L1 marginal residual drops below `opts.tolerance`.
pub fn sinkhorn(
    cost: &CostMatrix,
    marginals: &Marginals,
    opts: &SolverOptions,
) -> Result<SinkhornOutput> {
    opts.validate()?;
    vec_dims_check(cost.dims(), marginals)?;
    let (lambda, eta, iterations, residual) = if opts.log_domain {
        solve_log(cost, marginals, opts)
    } else {
        solve_linear(cost, marginals, opts)?
    };
    let scaling = ScalingVectors::from_multipliers(lambda, eta, cost.epsilon());
    let plan = TransportPlan::dense(scaling.reconstruct(cost))?;
    if !(residual <= opts.tolerance) {
        return Err(Error::NonConvergence {
            iterations,
            residual,
        });
    }
    Ok(SinkhornOutput {
        plan,
        scaling,
        iterations,
        residual,
    })
}

fn relative_residual(lambda: &[f64], eta: &[f64], cost: &CostMatrix, marginals: &Marginals) -> f64 {
    let eps = cost.epsilon();
    let c = cost.values();
    let (m, n) = c.dim();
    let mut cols = vec![0.0; n];
    let mut row_l1 = 0.0;
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..n {
            let t = (-(lambda[i] + c[[i, j]] + eta[j]) / eps).exp();
            row += t;
            cols[j] += t;
        }
        row_l1 += (row - marginals.supply()[i]).abs();
    }
    let col_l1: f64 = cols
        .iter()
        .zip(marginals.demand())
        .map(|(a, b)| (a - b).abs())
        .sum();
    row_l1.max(col_l1) / marginals.total()
}

fn solve_log(
    cost: &CostMatrix,
    marginals: &Marginals,
    opts: &SolverOptions,
) -> (Vec<f64>, Vec<f64>, usize, f64) {
    let eps = cost.epsilon();
    let c = cost.values();
    let (m, n) = c.dim();
    let log_mu: Vec<f64> = marginals.supply().iter().map(|v| v.ln()).collect();
    let log_nu: Vec<f64> = marginals.demand().iter().map(|v| v.ln()).collect();

    // Potentials f = -lambda, g = -eta.
    // Zero-mass rows are dropped from the start.
    let mut f: Vec<f64> = log_mu
        .iter()
        .map(|l| {
            if l.is_finite() {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut g = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        for j in 0..n {
            let lse = log_sum_exp((0..m).map(|i| (f[i] - c[[i, j]]) / eps));
            g[j] = eps * (log_nu[j] - lse);
        }
        for i in 0..m {
            let lse = log_sum_exp((0..n).map(|j| (g[j] - c[[i, j]]) / eps));
            f[i] = eps * (log_mu[i] - lse);
        }
        let lambda: Vec<f64> = f.iter().map(|v| -v).collect();
        let eta: Vec<f64> = g.iter().map(|v| -v).collect();
        residual = relative_residual(&lambda, &eta, cost, marginals);
        if residual <= opts.tolerance {
            break;
        }
    }
    (
        f.into_iter().map(|v| -v).collect(),
        g.into_iter().map(|v| -v).collect(),
        iterations,
        residual,
    )
}

fn solve_linear(
    cost: &CostMatrix,
    marginals: &Marginals,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, Vec<f64>, usize, f64)> {
    let eps = cost.epsilon();
    let kernel = cost.kernel();
    let (m, n) = kernel.dim();
    let mu = marginals.supply();
    let nu = marginals.demand();
    for (i, row) in kernel.rows().into_iter().enumerate() {
        if mu[i] > 0.0 && row.iter().all(|&k| k == 0.0) {
            return Err(Error::NumericUnderflow {
                axis: "row",
                index: i,
            });
        }
    }
    for (j, col) in kernel.columns().into_iter().enumerate() {
        if nu[j] > 0.0 && col.iter().all(|&k| k == 0.0) {
            return Err(Error::NumericUnderflow {
                axis: "column",
                index: j,
            });
        }
    }

    let mut pi = vec![1.0; m];
    let mut omega = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let to_multiplier = |s: &[f64]| s.iter().map(|v| -eps * v.ln()).collect::<Vec<_>>();
    while iterations < opts.max_iterations {
        iterations += 1;
        for j in 0..n {
            let denom: f64 = (0..m).map(|i| kernel[[i, j]] * pi[i]).sum();
            omega[j] = nu[j] / denom;
        }
        for i in 0..m {
            let denom: f64 = (0..n).map(|j| kernel[[i, j]] * omega[j]).sum();
            pi[i] = mu[i] / denom;
        }
        if pi.iter().chain(omega.iter()).any(|v| !v.is_finite()) {
            let index = pi.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::NumericUnderflow { axis: "row", index });
        }
        residual = relative_residual(&to_multiplier(&pi), &to_multiplier(&omega), cost, marginals);
        if residual <= opts.tolerance {
            break;
        }
    }
    Ok((
        to_multiplier(&pi),
        to_multiplier(&omega),
        iterations,
        residual,
    ))
}

/// `sum C T + eps * sum T (log T - 1)` over observed entries, with
/// `0 (log 0 - 1) = 0`.
pub fn entropic_objective(plan: &TransportPlan, cost: &CostMatrix) -> f64 {
    let eps = cost.epsilon();
    let c = cost.values();
    let t = plan.raw_values();
    let mut total = 0.0;
    for ((idx, &v), &observed) in t.indexed_iter().zip(plan.mask().iter()) {
        if !observed || v == 0.0 {
            continue;
        }
        total += c[idx] * v + eps * v * (v.ln() - 1.0);
    }
    total
}

/// Absolute L1 norms of `(row sums - mu, column sums - nu)`, treating
/// unobserved entries as zero.
pub fn marginal_residual(plan: &TransportPlan, marginals: &Marginals) -> Result<(f64, f64)> {
    vec_dims_check(plan.dims(), marginals)?;
    let rows: f64 = plan
        .row_sums()
        .iter()
        .zip(marginals.supply())
        .map(|(a, b)| (a - b).abs())
        .sum();
    let cols: f64 = plan
        .col_sums()
        .iter()
        .zip(marginals.demand())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok((rows, cols))
}

/// `C'_ij = C_ij + a_i + b_j`.
pub fn gauge_shift(cost: &CostMatrix, row_shift: &[f64], col_shift: &[f64]) -> Result<CostMatrix> {
    let (m, n) = cost.dims();
    if row_shift.len() != m || col_shift.len() != n {
        return Err(Error::shape(
            format!("({m}, {n})"),
            format!("({}, {})", row_shift.len(), col_shift.len()),
        ));
    }
    let shifted = Array2::from_shape_fn((m, n), |(i, j)| {
        cost.values()[[i, j]] + row_shift[i] + col_shift[j]
    });
    CostMatrix::new(shifted, cost.epsilon())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn half() -> Marginals {
        Marginals::new(vec![0.5, 0.5], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn zero_cost_gives_independent_coupling() {
        let cost = CostMatrix::new(Array2::zeros((2, 2)), 1.0).unwrap();
        let out = sinkhorn(&cost, &half(), &SolverOptions::default()).unwrap();
        for v in out.plan.raw_values() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn single_cell_plan_is_forced() {
        let cost = CostMatrix::new(array![[0.7]], 0.1).unwrap();
        let m = Marginals::new(vec![1.0], vec![1.0]).unwrap();
        let out = sinkhorn(&cost, &m, &SolverOptions::default()).unwrap();
        assert!((out.plan.raw_values()[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_and_log_domains_agree() {
        let cost = CostMatrix::new(array![[0.1, 0.9, 0.4], [0.3, 0.2, 0.8]], 0.3).unwrap();
        let m = Marginals::new(vec![0.3, 0.7], vec![0.2, 0.5, 0.3]).unwrap();
        let log = sinkhorn(&cost, &m, &SolverOptions::default()).unwrap();
        let lin = sinkhorn(
            &cost,
            &m,
            &SolverOptions {
                log_domain: false,
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in log.plan.raw_values().iter().zip(lin.plan.raw_values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_domain_reports_underflow() {
        let cost = CostMatrix::new(array![[1.0, 1.0], [0.0, 0.0]], 1e-4).unwrap();
        let opts = SolverOptions {
            log_domain: false,
            ..Default::default()
        };
        let err = sinkhorn(&cost, &half(), &opts).unwrap_err();
        assert!(matches!(
            err,
            Error::NumericUnderflow {
                axis: "row",
                index: 0
            }
        ));
        // The log-domain solver copes with the same instance.
        let out = sinkhorn(&cost, &half(), &SolverOptions::default()).unwrap();
        assert!(out.residual <= 1e-9);
    }

    #[test]
    fn non_convergence_is_reported() {
        let cost = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]], 0.01).unwrap();
        let m = Marginals::new(vec![0.9, 0.1], vec![0.1, 0.9]).unwrap();
        let opts = SolverOptions {
            max_iterations: 2,
            tolerance: 1e-15,
            ..Default::default()
        };
        match sinkhorn(&cost, &m, &opts).unwrap_err() {
            Error::NonConvergence {
                iterations,
                residual,
            } => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-15);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn zero_mass_rows_come_back_as_zero_rows() {
        let cost = CostMatrix::new(array![[0.2, 0.5], [0.1, 0.3], [0.9, 0.4]], 0.2).unwrap();
        let m = Marginals::new(vec![0.4, 0.0, 0.6], vec![0.0, 1.0]).unwrap();
        let out = sinkhorn(&cost, &m, &SolverOptions::default()).unwrap();
        let t = out.plan.raw_values();
        assert_eq!(t.row(1).sum(), 0.0);
        assert_eq!(t.column(0).sum(), 0.0);
        assert!((t[[0, 1]] - 0.4).abs() < 1e-12);
        assert!((t[[2, 1]] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn objective_single_entry_and_uniform() {
        let plan = TransportPlan::dense(array![[1.0]]).unwrap();
        let cost = CostMatrix::new(array![[0.0]], 1.0).unwrap();
        assert!((entropic_objective(&plan, &cost) + 1.0).abs() < 1e-15);

        let plan = TransportPlan::dense(Array2::from_elem((2, 2), 0.25)).unwrap();
        let cost = CostMatrix::new(Array2::zeros((2, 2)), 1.0).unwrap();
        let expected = 4.0 * 0.25 * (0.25f64.ln() - 1.0);
        assert!((entropic_objective(&plan, &cost) - expected).abs() < 1e-15);
        assert!((expected + 2.386294).abs() < 1e-6);
    }

    #[test]
    fn objective_treats_zero_entries_by_convention() {
        let plan = TransportPlan::dense(array![[0.0, 1.0]]).unwrap();
        let cost = CostMatrix::new(array![[5.0, 0.0]], 1.0).unwrap();
        assert_eq!(entropic_objective(&plan, &cost), -1.0);
    }

    #[test]
    fn residual_examples() {
        let plan = TransportPlan::dense(Array2::from_elem((2, 2), 0.25)).unwrap();
        assert_eq!(marginal_residual(&plan, &half()).unwrap(), (0.0, 0.0));

        let plan = TransportPlan::dense(array![[0.5, 0.0], [0.0, 0.5]]).unwrap();
        let m = Marginals::new(vec![0.6, 0.4], vec![0.5, 0.5]).unwrap();
        let (r, c) = marginal_residual(&plan, &m).unwrap();
        assert!((r - 0.2).abs() < 1e-15);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn residual_shape_mismatch() {
        let plan = TransportPlan::dense(Array2::zeros((3, 2))).unwrap();
        assert!(matches!(
            marginal_residual(&plan, &half()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn gauge_shift_identity() {
        let cost = CostMatrix::new(array![[0.1, 0.2], [0.3, 0.4]], 0.5).unwrap();
        let same = gauge_shift(&cost, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(same, cost);
        let shifted = gauge_shift(&cost, &[1.0, 0.0], &[0.0, 2.0]).unwrap();
        assert_eq!(shifted.values(), &array![[1.1, 3.2], [0.3, 2.4]]);
    }
}
