//! Fixed-depth Sinkhorn with a reverse pass.
//!
//! The forward pass runs exactly `depth` log-domain iterations from zero
//! potentials (each iteration updates `g` then `f`, so row sums are exact on
//! exit) and records every intermediate potential. The backward pass replays
//! the recursion in reverse, mapping a gradient with respect to the output
//! plan onto a gradient with respect to the cost matrix.
//!
//! With `P` the row-softmax of `(g_j - C_ij) / eps` and `Q` the column-softmax
//! of `(f_i - C_ij) / eps`, the local derivatives are
//!
//! ```text
//! df_i/dg_j = -P_ij    df_i/dC_ij = P_ij
//! dg_j/df_i = -Q_ij    dg_j/dC_ij = Q_ij
//! ```

use ndarray::Array2;

use super::log_sum_exp;
use super::types::Marginals;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct UnrolledSinkhorn {
    epsilon: f64,
    /// `f` after each of the `depth` iterations.
    f_history: Vec<Vec<f64>>,
    /// `g` after each of the `depth` iterations.
    g_history: Vec<Vec<f64>>,
    plan: Array2<f64>,
}

impl UnrolledSinkhorn {
    /// Runs `depth` iterations on `cost` (raw values) with strength `epsilon`.
    pub fn forward(
        cost: &Array2<f64>,
        epsilon: f64,
        marginals: &Marginals,
        depth: usize,
    ) -> Result<Self> {
        let (m, n) = cost.dim();
        if marginals.dims() != (m, n) {
            return Err(Error::shape(
                format!("{:?}", marginals.dims()),
                format!("({m}, {n})"),
            ));
        }
        if depth == 0 {
            return Err(Error::InvalidInput(
                "unroll depth must be at least 1".into(),
            ));
        }
        let log_mu: Vec<f64> = marginals.supply().iter().map(|v| v.ln()).collect();
        let log_nu: Vec<f64> = marginals.demand().iter().map(|v| v.ln()).collect();
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
        let mut f_history = Vec::with_capacity(depth);
        let mut g_history = Vec::with_capacity(depth);
        for _ in 0..depth {
            for j in 0..n {
                let lse = log_sum_exp((0..m).map(|i| (f[i] - cost[[i, j]]) / epsilon));
                g[j] = epsilon * (log_nu[j] - lse);
            }
            g_history.push(g.clone());
            for i in 0..m {
                let lse = log_sum_exp((0..n).map(|j| (g[j] - cost[[i, j]]) / epsilon));
                f[i] = epsilon * (log_mu[i] - lse);
            }
            f_history.push(f.clone());
        }
        let plan = Array2::from_shape_fn((m, n), |(i, j)| {
            ((f[i] + g[j] - cost[[i, j]]) / epsilon).exp()
        });
        Ok(Self {
            epsilon,
            f_history,
            g_history,
            plan,
        })
    }

    pub fn plan(&self) -> &Array2<f64> {
        &self.plan
    }

    pub fn depth(&self) -> usize {
        self.f_history.len()
    }

    /// Final row potentials (`f = -lambda`).
    pub fn row_potentials(&self) -> &[f64] {
        self.f_history.last().expect("depth >= 1")
    }

    pub fn col_potentials(&self) -> &[f64] {
        self.g_history.last().expect("depth >= 1")
    }

    /// Pulls `dL/dT` back to `dL/dC`.
    pub fn backward(&self, cost: &Array2<f64>, plan_grad: &Array2<f64>) -> Array2<f64> {
        let eps = self.epsilon;
        let (m, n) = cost.dim();
        let mut cost_grad = Array2::zeros((m, n));
        let mut f_bar = vec![0.0; m];
        let mut g_bar = vec![0.0; n];

        // T_ij = exp((f_i + g_j - C_ij) / eps)
        for i in 0..m {
            for j in 0..n {
                let s = plan_grad[[i, j]] * self.plan[[i, j]] / eps;
                f_bar[i] += s;
                g_bar[j] += s;
                cost_grad[[i, j]] -= s;
            }
        }

        let initial_f: Vec<f64> = self.f_history[0]
            .iter()
            .map(|v| if *v == f64::NEG_INFINITY { *v } else { 0.0 })
            .collect();
        for k in (0..self.depth()).rev() {
            let g = &self.g_history[k];
            // f^k = eps log mu - eps LSE_j((g^k_j - C_ij) / eps)
            for i in 0..m {
                let fb = f_bar[i];
                if fb == 0.0 {
                    continue;
                }
                let row: Vec<f64> = (0..n).map(|j| (g[j] - cost[[i, j]]) / eps).collect();
                let lse = log_sum_exp(row.iter().copied());
                if !lse.is_finite() {
                    continue;
                }
                for j in 0..n {
                    let p = (row[j] - lse).exp();
                    g_bar[j] -= fb * p;
                    cost_grad[[i, j]] += fb * p;
                }
            }
            f_bar.iter_mut().for_each(|v| *v = 0.0);

            // g^k = eps log nu - eps LSE_i((f^{k-1}_i - C_ij) / eps)
            let f_prev = if k == 0 {
                &initial_f
            } else {
                &self.f_history[k - 1]
            };
            for j in 0..n {
                let gb = g_bar[j];
                if gb == 0.0 {
                    continue;
                }
                let col: Vec<f64> = (0..m).map(|i| (f_prev[i] - cost[[i, j]]) / eps).collect();
                let lse = log_sum_exp(col.iter().copied());
                if !lse.is_finite() {
                    continue;
                }
                for i in 0..m {
                    let q = (col[i] - lse).exp();
                    f_bar[i] -= gb * q;
                    cost_grad[[i, j]] += gb * q;
                }
            }
            g_bar.iter_mut().for_each(|v| *v = 0.0);
        }
        cost_grad
    }
}
