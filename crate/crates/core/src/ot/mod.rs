//! Entropy-regularised optimal transport.
//!
//! The forward problem: given a cost matrix `C`, a regularisation strength
//! `eps` and marginals `(mu, nu)`, find the plan
//!
//! ```text
//! T = diag(pi) exp(-C / eps) diag(omega)
//! ```
//!
//! whose row sums equal `mu` and column sums equal `nu`. This module holds
//! the domain types shared by the rest of the crate, the converged Sinkhorn
//! solver, objective/dual diagnostics, and a fixed-depth unrolled solver that
//! supports reverse-mode differentiation.

mod dual;
mod sinkhorn;
mod types;
pub mod unrolled;

pub use dual::{
    dual_feasible, dual_objective, entropic_dual_objective, DualPotentials, FEASIBILITY_SLACK,
};
pub use sinkhorn::{
    entropic_objective, gauge_shift, marginal_residual, sinkhorn, SinkhornOutput, SolverOptions,
};
pub use types::{CostMatrix, Marginals, ScalingVectors, TransportPlan, BALANCE_TOLERANCE};

/// Numerically stable `log(sum(exp(x)))`. Returns `-inf` for an empty or
/// all-`-inf` input.
pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64> + Clone,
{
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
