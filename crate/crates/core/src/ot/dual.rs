use serde::{Deserialize, Serialize};

use super::types::{CostMatrix, Marginals};
use crate::error::{Error, Result};

/// Slack allowed when checking `f_i + g_j <= C_ij`.
pub const FEASIBILITY_SLACK: f64 = 1e-12;

/// Pickup (`f`, per source) and delivery (`g`, per destination) prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPotentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

/// `<f, mu> + <g, nu>`.
pub fn dual_objective(potentials: &DualPotentials, marginals: &Marginals) -> Result<f64> {
    if (potentials.f.len(), potentials.g.len()) != marginals.dims() {
        return Err(Error::shape(
            format!("{:?}", marginals.dims()),
            format!("({}, {})", potentials.f.len(), potentials.g.len()),
        ));
    }
    let supply: f64 = potentials
        .f
        .iter()
        .zip(marginals.supply())
        .map(|(f, mu)| f * mu)
        .sum();
    let demand: f64 = potentials
        .g
        .iter()
        .zip(marginals.demand())
        .map(|(g, nu)| g * nu)
        .sum();
    Ok(supply + demand)
}

/// Whether `f_i + g_j <= C_ij` holds everywhere (up to [`FEASIBILITY_SLACK`]).
pub fn dual_feasible(potentials: &DualPotentials, cost: &CostMatrix) -> Result<bool> {
    let (m, n) = cost.dims();
    if potentials.f.len() != m || potentials.g.len() != n {
        return Err(Error::shape(
            format!("({m}, {n})"),
            format!("({}, {})", potentials.f.len(), potentials.g.len()),
        ));
    }
    let c = cost.values();
    Ok(potentials.f.iter().enumerate().all(|(i, fi)| {
        potentials
            .g
            .iter()
            .enumerate()
            .all(|(j, gj)| fi + gj <= c[[i, j]] + FEASIBILITY_SLACK)
    }))
}

/// Dual of the entropic problem,
/// `<f, mu> + <g, nu> - eps * sum_ij exp((f_i + g_j - C_ij) / eps)`.
///
/// Each Sinkhorn half-step maximises this exactly in one block of
/// potentials, so it is nondecreasing along the iterates, and at the fixed
/// point it equals the primal entropic objective.
pub fn entropic_dual_objective(
    potentials: &DualPotentials,
    cost: &CostMatrix,
    marginals: &Marginals,
) -> Result<f64> {
    let linear = dual_objective(potentials, marginals)?;
    if cost.dims() != marginals.dims() {
        return Err(Error::shape(
            format!("{:?}", marginals.dims()),
            format!("{:?}", cost.dims()),
        ));
    }
    let eps = cost.epsilon();
    let mass: f64 = cost
        .values()
        .indexed_iter()
        .map(|((i, j), c)| ((potentials.f[i] + potentials.g[j] - c) / eps).exp())
        .sum();
    Ok(linear - eps * mass)
}
