use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::mlp::{backward, forward_raw, ForwardCache, LayerStack, MlpParameters};
use crate::error::{Error, Result};
use crate::ot::unrolled::UnrolledSinkhorn;
use crate::ot::{CostMatrix, Marginals, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputTransform {
    /// `log(1 + T) / scale`, masked entries set to 0.
    #[default]
    Log1pScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay (1.0 = constant).
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub epsilon: f64,
    pub unroll_depth: usize,
    pub penalty_weight: f64,
    pub input_transform: InputTransform,
    /// Window (in epochs) of the plateau test; 0 disables early stopping.
    pub patience: usize,
    pub min_relative_improvement: f64,
    /// Fit an independent network to each year instead of one pooled model.
    pub per_year: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lr_decay: 1.0,
            batch_size: 2,
            epochs: 5_000,
            epsilon: 0.1,
            unroll_depth: 50,
            penalty_weight: 1.0,
            input_transform: InputTransform::Log1pScaled,
            patience: 200,
            min_relative_improvement: 1e-6,
            per_year: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.unroll_depth == 0 {
            return bad("batch_size, epochs and unroll_depth must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.penalty_weight >= 0.0 && self.penalty_weight.is_finite()) {
            return bad("penalty_weight must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub data_term: f64,
    pub penalty_term: f64,
    pub total: f64,
}

impl LossReport {
    fn new(data_term: f64, penalty_term: f64, penalty_weight: f64) -> Self {
        Self {
            data_term,
            penalty_term,
            total: data_term + penalty_weight * penalty_term,
        }
    }
}

/// Network input for `plan`: row-major `log(1 + T) / scale`, 0 where masked.
pub fn encode_plan(plan: &TransportPlan, scale: f64) -> Vec<f64> {
    plan.raw_values()
        .iter()
        .zip(plan.mask())
        .map(|(v, observed)| if *observed { v.ln_1p() / scale } else { 0.0 })
        .collect()
}

fn check_dims(params: &MlpParameters, plan: &TransportPlan) -> Result<(usize, usize)> {
    let (m, n) = plan.raw_values().dim();
    let cfg = &params.config;
    if m * n != cfg.input_dim || m * n != cfg.output_dim {
        return Err(Error::shape(
            format!("{} entries", cfg.input_dim),
            format!("({m}, {n})"),
        ));
    }
    Ok((m, n))
}

fn run_network(params: &MlpParameters, plan: &TransportPlan) -> Result<(ForwardCache, (usize, usize))> {
    let dims = check_dims(params, plan)?;
    let input = encode_plan(plan, params.input_scale);
    Ok((forward_raw(&params.layers, &input), dims))
}

/// `C = u(T)`.
pub fn forward(params: &MlpParameters, plan: &TransportPlan, epsilon: f64) -> Result<CostMatrix> {
    let (cache, dims) = run_network(params, plan)?;
    let values = Array2::from_shape_vec(dims, cache.output().to_vec())
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    CostMatrix::new(values, epsilon)
}

/// Loss of a given cost matrix against an observed plan, and optionally its
/// gradient with respect to the cost entries.
pub fn cost_loss(
    cost: &Array2<f64>,
    plan_observed: &TransportPlan,
    marginals: &Marginals,
    tc: &TrainingConfig,
    with_gradient: bool,
) -> Result<(LossReport, Option<Array2<f64>>)> {
    if cost.dim() != plan_observed.raw_values().dim() {
        return Err(Error::shape(
            format!("{:?}", plan_observed.raw_values().dim()),
            format!("{:?}", cost.dim()),
        ));
    }
    let unrolled = UnrolledSinkhorn::forward(cost, tc.epsilon, marginals, tc.unroll_depth)?;
    let predicted = unrolled.plan();
    let observed = plan_observed.raw_values();
    let mut data_term = 0.0;
    let mut plan_grad = Array2::zeros(cost.dim());
    for (((idx, t), mask), t_hat) in observed.indexed_iter().zip(plan_observed.mask()).zip(predicted) {
        if *mask && *t > 0.0 {
            let r = t_hat - t;
            data_term += r * r;
            plan_grad[idx] = 2.0 * r;
        }
    }
    let row_dev: Vec<f64> = cost.rows().into_iter().map(|r| r.sum() - 1.0).collect();
    let penalty_term: f64 = row_dev.iter().map(|d| d.abs()).sum();
    let report = LossReport::new(data_term, penalty_term, tc.penalty_weight);
    if !with_gradient {
        return Ok((report, None));
    }
    let mut grad = unrolled.backward(cost, &plan_grad);
    for (mut row, d) in grad.rows_mut().into_iter().zip(&row_dev) {
        let s = tc.penalty_weight * sign(*d);
        row.iter_mut().for_each(|g| *g += s);
    }
    Ok((report, Some(grad)))
}

/// Subgradient of `|x|`, taking 0 at the kink.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn loss(
    params: &MlpParameters,
    plan_observed: &TransportPlan,
    marginals: &Marginals,
    tc: &TrainingConfig,
) -> Result<LossReport> {
    let cost = forward(params, plan_observed, tc.epsilon)?;
    cost_loss(cost.values(), plan_observed, marginals, tc, false).map(|(r, _)| r)
}

/// Loss and its exact gradient with respect to every network parameter.
pub fn gradient(
    params: &MlpParameters,
    plan_observed: &TransportPlan,
    marginals: &Marginals,
    tc: &TrainingConfig,
) -> Result<(LossReport, LayerStack)> {
    let (cache, dims) = run_network(params, plan_observed)?;
    let cost = Array2::from_shape_vec(dims, cache.output().to_vec())
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let (report, cost_grad) = cost_loss(&cost, plan_observed, marginals, tc, true)?;
    let cost_grad = cost_grad.expect("requested");
    let output_grad: Vec<f64> = cost_grad.iter().copied().collect();
    let grads = backward(&params.layers, &cache, &output_grad);
    if !grads.all_finite() || !report.total.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok((report, grads))
}
