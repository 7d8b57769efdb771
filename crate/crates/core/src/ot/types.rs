use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marginal totals whose relative difference exceeds this are rejected;
/// smaller differences are absorbed by rescaling the demand side.
pub const BALANCE_TOLERANCE: f64 = 1e-6;

/// Supply (`mu`, row sums) and demand (`nu`, column sums) of a balanced
/// transport problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    supply: Vec<f64>,
    demand: Vec<f64>,
}

impl Marginals {
    /// Validates and balances the marginals. Demand is rescaled so that both
    /// totals agree exactly when they differ by at most [`BALANCE_TOLERANCE`].
    pub fn new(supply: Vec<f64>, demand: Vec<f64>) -> Result<Self> {
        if supply.is_empty() || demand.is_empty() {
            return Err(Error::InvalidInput("marginals must be non-empty".into()));
        }
        if supply
            .iter()
            .chain(demand.iter())
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::InvalidInput(
                "marginal entries must be finite and nonnegative".into(),
            ));
        }
        let s: f64 = supply.iter().sum();
        let d: f64 = demand.iter().sum();
        if s <= 0.0 || d <= 0.0 {
            return Err(Error::InvalidInput("marginals carry no mass".into()));
        }
        if ((s - d) / s.max(d)).abs() > BALANCE_TOLERANCE {
            return Err(Error::UnbalancedMarginals {
                supply: s,
                demand: d,
            });
        }
        let demand = if s == d {
            demand
        } else {
            let scale = s / d;
            demand.into_iter().map(|v| v * scale).collect()
        };
        Ok(Self { supply, demand })
    }

    pub fn supply(&self) -> &[f64] {
        &self.supply
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn total(&self) -> f64 {
        self.supply.iter().sum()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.supply.len(), self.demand.len())
    }
}

/// A latent cost matrix together with the regularisation strength it is
/// meant to be solved with.
///
/// Costs produced by the inverse model lie in `(0, 1)`; the constructor only
/// demands finiteness so that gauge-shifted or rescaled costs can be formed.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
    epsilon: f64,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("cost entries must be finite".into()));
        }
        if values.is_empty() {
            return Err(Error::InvalidInput("cost matrix is empty".into()));
        }
        Ok(Self { values, epsilon })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// True when every entry lies in `[0, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// The Gibbs kernel `exp(-C / eps)`.
    pub fn kernel(&self) -> Array2<f64> {
        let eps = self.epsilon;
        self.values.mapv(|c| (-c / eps).exp())
    }
}

/// A nonnegative flow matrix with an observation mask.
///
/// Entries where the mask is `false` are unobserved. Whatever value is stored
/// there is a sentinel: every accessor and downstream computation ignores it.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    values: Array2<f64>,
    mask: Array2<bool>,
}

impl TransportPlan {
    /// A fully observed plan.
    pub fn dense(values: Array2<f64>) -> Result<Self> {
        let mask = Array2::from_elem(values.dim(), true);
        Self::masked(values, mask)
    }

    pub fn masked(values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(Error::shape(
                format!("{:?}", values.dim()),
                format!("{:?}", mask.dim()),
            ));
        }
        for (v, &m) in values.iter().zip(mask.iter()) {
            if m && (!v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "observed plan entries must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(Self { values, mask })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Raw storage including sentinels at masked positions.
    pub fn raw_values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[[i, j]]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.mask[[i, j]].then(|| self.values[[i, j]])
    }

    /// Values with unobserved entries replaced by zero.
    pub fn zero_filled(&self) -> Array2<f64> {
        let mut out = self.values.clone();
        out.zip_mut_with(&self.mask, |v, &m| {
            if !m {
                *v = 0.0;
            }
        });
        out
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn total(&self) -> f64 {
        self.values
            .iter()
            .zip(self.mask.iter())
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.zero_filled()
            .rows()
            .into_iter()
            .map(|r| r.sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.zero_filled()
            .columns()
            .into_iter()
            .map(|c| c.sum())
            .collect()
    }
}

/// Diagonal scalings `pi = exp(-lambda / eps)` and `omega = exp(-eta / eps)`
/// of the Gibbs kernel, with the multipliers they derive from.
///
/// Rows or columns with zero marginal mass carry an infinite multiplier and a
/// zero scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingVectors {
    pub pi: Vec<f64>,
    pub omega: Vec<f64>,
    pub lambda_dual: Vec<f64>,
    pub eta_dual: Vec<f64>,
    epsilon: f64,
}

impl ScalingVectors {
    pub(crate) fn from_multipliers(lambda: Vec<f64>, eta: Vec<f64>, epsilon: f64) -> Self {
        let pi = lambda.iter().map(|l| (-l / epsilon).exp()).collect();
        let omega = eta.iter().map(|e| (-e / epsilon).exp()).collect();
        Self {
            pi,
            omega,
            lambda_dual: lambda,
            eta_dual: eta,
            epsilon,
        }
    }

    /// Rebuilds `diag(pi) exp(-C/eps) diag(omega)` in log space.
    pub fn reconstruct(&self, cost: &CostMatrix) -> Array2<f64> {
        let eps = self.epsilon;
        Array2::from_shape_fn(cost.dims(), |(i, j)| {
            let exponent = -(self.lambda_dual[i] + cost.values()[[i, j]] + self.eta_dual[j]) / eps;
            exponent.exp()
        })
    }

    /// Potentials `f = -lambda`, `g = -eta` of the dual problem.
    pub fn potentials(&self) -> super::DualPotentials {
        super::DualPotentials {
            f: self.lambda_dual.iter().map(|l| -l).collect(),
            g: self.eta_dual.iter().map(|e| -e).collect(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl From<&TransportPlan> for Array2<f64> {
    fn from(plan: &TransportPlan) -> Self {
        plan.zero_filled()
    }
}

pub(crate) fn vec_dims_check(plan: (usize, usize), marginals: &Marginals) -> Result<()> {
    if plan != marginals.dims() {
        return Err(Error::shape(
            format!("{:?}", marginals.dims()),
            format!("{plan:?}"),
        ));
    }
    Ok(())
}
