use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::adam_step;
use super::loss::{forward, gradient, LossReport, TrainingConfig};
use super::mlp::{MlpParameters, NetworkConfig};
use crate::error::{Error, Result};
use crate::ingest::{marginals_from_plan, ReporterView, TradePanel};
use crate::ot::{CostMatrix, Marginals, TransportPlan};

/// One reporter view of one year, with marginals from its own sums.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub year: i32,
    pub view: ReporterView,
    pub plan: TransportPlan,
    pub marginals: Marginals,
}

/// The `2 L` training samples of a panel: both views of every year.
pub fn training_samples(panel: &TradePanel) -> Result<Vec<TrainingSample>> {
    if panel.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let mut samples = Vec::with_capacity(2 * panel.len());
    for report in &panel.reports {
        for view in ReporterView::BOTH {
            let plan = report.view(view).clone();
            let marginals = marginals_from_plan(&plan)?;
            samples.push(TrainingSample {
                year: report.year,
                view,
                plan,
                marginals,
            });
        }
    }
    Ok(samples)
}

/// Largest `log(1 + T)` over every observed entry (1 if all are zero).
pub fn input_scale<'a>(plans: impl IntoIterator<Item = &'a TransportPlan>) -> f64 {
    let max = plans
        .into_iter()
        .flat_map(|p| {
            p.raw_values()
                .iter()
                .zip(p.mask())
                .filter(|(_, m)| **m)
                .map(|(v, _)| v.ln_1p())
        })
        .fold(0.0, f64::max);
    if max > 0.0 {
        max
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub data_term: f64,
    pub penalty_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub updates: usize,
}

impl TrainingHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,data_term,penalty_term,total\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.data_term, r.penalty_term, r.total));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn mean_report(reports: &[LossReport], penalty_weight: f64) -> (f64, f64, f64) {
    let n = reports.len() as f64;
    let data = reports.iter().map(|r| r.data_term).sum::<f64>() / n;
    let penalty = reports.iter().map(|r| r.penalty_term).sum::<f64>() / n;
    (data, penalty, data + penalty_weight * penalty)
}

fn plateaued(best: &[f64], tc: &TrainingConfig) -> bool {
    let e = best.len();
    if tc.patience == 0 || e <= tc.patience {
        return false;
    }
    let before = best[e - 1 - tc.patience];
    let now = best[e - 1];
    now == 0.0 || (before - now) / before < tc.min_relative_improvement
}

/// Fits one network to `samples`.
///
/// Each epoch visits the samples in a seeded random order, one Adam update
/// per batch on the batch-mean gradient. Per-sample gradients are evaluated
/// in parallel and summed in sample order.
pub fn train_samples(
    samples: &[TrainingSample],
    nc: NetworkConfig,
    tc: &TrainingConfig,
) -> Result<(MlpParameters, TrainingHistory)> {
    tc.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let scale = input_scale(samples.iter().map(|s| &s.plan));
    let mut params = MlpParameters::init(nc)?.with_input_scale(scale);
    let mut rng = ChaCha8Rng::seed_from_u64(nc.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = TrainingHistory::default();
    let mut best = Vec::with_capacity(tc.epochs);
    let mut lr = tc.learning_rate;
    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut reports = Vec::with_capacity(samples.len());
        for batch in order.chunks(tc.batch_size) {
            let results = batch
                .par_iter()
                .map(|&k| {
                    let s = &samples[k];
                    gradient(&params, &s.plan, &s.marginals, tc)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut sum = params.zero_gradients();
            for (report, grads) in &results {
                sum.add_scaled(grads, 1.0);
                reports.push(*report);
            }
            sum.scale(1.0 / batch.len() as f64);
            params = adam_step(params, &sum, lr);
            history.updates += 1;
        }
        let (data_term, penalty_term, total) = mean_report(&reports, tc.penalty_weight);
        history.epochs.push(EpochRecord {
            epoch,
            data_term,
            penalty_term,
            total,
        });
        best.push(best.last().map_or(total, |b: &f64| b.min(total)));
        lr *= tc.lr_decay;
        if plateaued(&best, tc) {
            history.stopped_early = true;
            break;
        }
    }
    if !params.layers.all_finite() {
        return Err(Error::NonFiniteGradient);
    }
    Ok((params, history))
}

/// One pooled network over all years (the default) or, with
/// `tc.per_year`, an independent network per year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Pooled { params: MlpParameters },
    PerYear { models: Vec<(i32, MlpParameters)> },
}

impl TrainedModel {
    pub fn params_for(&self, year: i32) -> Result<&MlpParameters> {
        match self {
            TrainedModel::Pooled { params } => Ok(params),
            TrainedModel::PerYear { models } => models
                .iter()
                .find(|(y, _)| *y == year)
                .map(|(_, p)| p)
                .ok_or_else(|| Error::InvalidInput(format!("no model trained for year {year}"))),
        }
    }
}

pub fn train(
    panel: &TradePanel,
    nc: NetworkConfig,
    tc: &TrainingConfig,
) -> Result<(MlpParameters, TrainingHistory)> {
    train_samples(&training_samples(panel)?, nc, tc)
}

/// Pooled or per-year training according to `tc.per_year`. Per-year
/// histories are concatenated in year order.
pub fn train_model(
    panel: &TradePanel,
    nc: NetworkConfig,
    tc: &TrainingConfig,
) -> Result<(TrainedModel, TrainingHistory)> {
    let samples = training_samples(panel)?;
    if !tc.per_year {
        let (params, history) = train_samples(&samples, nc, tc)?;
        return Ok((TrainedModel::Pooled { params }, history));
    }
    let mut models = Vec::with_capacity(panel.len());
    let mut history = TrainingHistory::default();
    for year in &panel.years {
        let own: Vec<_> = samples.iter().filter(|s| s.year == *year).cloned().collect();
        let (params, h) = train_samples(&own, nc, tc)?;
        let offset = history.epochs.len();
        history.epochs.extend(h.epochs.iter().map(|r| EpochRecord {
            epoch: r.epoch + offset,
            ..*r
        }));
        history.updates += h.updates;
        history.stopped_early |= h.stopped_early;
        models.push((*year, params));
    }
    Ok((TrainedModel::PerYear { models }, history))
}

#[derive(Debug, Clone)]
pub struct InferredCost {
    pub year: i32,
    pub view: ReporterView,
    pub cost: CostMatrix,
}

/// `C(t) = u(T(t))` for each year and each requested reporter view.
pub fn infer_costs(
    model: &TrainedModel,
    panel: &TradePanel,
    views: &[ReporterView],
    epsilon: f64,
) -> Result<Vec<InferredCost>> {
    let mut out = Vec::with_capacity(panel.len() * views.len());
    for report in &panel.reports {
        let params = model.params_for(report.year)?;
        for &view in views {
            out.push(InferredCost {
                year: report.year,
                view,
                cost: forward(params, report.view(view), epsilon)?,
            });
        }
    }
    Ok(out)
}

/// Serialized training result: configs, seed, weights and optimiser state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}
