//! Propagation of reporting discrepancies through the inverse map.
//!
//! Every doubly reported flow is drawn from the exporter or the importer
//! report with equal probability; each drawn plan is pushed through the
//! trained network and the resulting cost through Sinkhorn.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::ingest::DualReport;
use crate::ingest::marginals_from_plan;
use crate::inverse::{forward, MlpParameters};
use crate::ot::{sinkhorn, CostMatrix, Marginals, SolverOptions, TransportPlan};

/// One draw from the dual report: doubly observed entries pick either
/// report with probability 1/2, singly observed entries keep their only
/// value, unobserved entries stay masked.
pub fn sample_plan<R: Rng + ?Sized>(report: &DualReport, rng: &mut R) -> TransportPlan {
    let (e, i) = (&report.exporter_plan, &report.importer_plan);
    let dims = report.dims();
    let mut values = Array2::zeros(dims);
    let mut mask = Array2::from_elem(dims, false);
    for ((r, c), v) in values.indexed_iter_mut() {
        let picked = match (e.get(r, c), i.get(r, c)) {
            (Some(x), Some(y)) => Some(if rng.random_bool(0.5) { x } else { y }),
            (Some(x), None) | (None, Some(x)) => Some(x),
            (None, None) => None,
        };
        if let Some(x) = picked {
            *v = x;
            mask[[r, c]] = true;
        }
    }
    TransportPlan::masked(values, mask).expect("entries come from valid plans")
}

/// RNG of ensemble member `index`: independent of the evaluation order.
pub fn member_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleOptions {
    pub n: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub solver: SolverOptions,
    /// Use the report-averaged marginals for every member instead of the
    /// sums of each drawn plan.
    pub fixed_marginals: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 0,
            epsilon: 0.1,
            solver: SolverOptions::default(),
            fixed_marginals: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostEnsemble {
    pub year: i32,
    pub seed: u64,
    pub epsilon: f64,
    /// Member indices whose cost and plan were obtained.
    pub indices: Vec<usize>,
    pub samples: Vec<CostMatrix>,
    pub plan_samples: Vec<TransportPlan>,
    /// Members whose Sinkhorn solve failed, excluded from `samples`.
    pub failed: Vec<usize>,
    /// Entries observed by at least one reporter.
    pub observed: Array2<bool>,
}

impl CostEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn averaged_marginals(report: &DualReport) -> Result<Marginals> {
    let a = marginals_from_plan(&report.exporter_plan)?;
    let b = marginals_from_plan(&report.importer_plan)?;
    let avg = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| 0.5 * (p + q)).collect();
    Marginals::new(avg(a.supply(), b.supply()), avg(a.demand(), b.demand()))
}

enum Member {
    Ok(CostMatrix, TransportPlan),
    Failed,
}

pub fn build_ensemble(
    params: &MlpParameters,
    report: &DualReport,
    opts: &EnsembleOptions,
) -> Result<CostEnsemble> {
    if opts.n == 0 {
        return Err(Error::InsufficientSamples {
            required: 1,
            found: 0,
        });
    }
    let fixed = if opts.fixed_marginals {
        Some(averaged_marginals(report)?)
    } else {
        None
    };
    let members = (0..opts.n)
        .into_par_iter()
        .map(|k| {
            let plan = sample_plan(report, &mut member_rng(opts.seed, k));
            let cost = forward(params, &plan, opts.epsilon)?;
            let marginals = match &fixed {
                Some(m) => m.clone(),
                None => match marginals_from_plan(&plan) {
                    Ok(m) => m,
                    Err(_) => return Ok(Member::Failed),
                },
            };
            Ok(match sinkhorn(&cost, &marginals, &opts.solver) {
                Ok(out) => Member::Ok(cost, out.plan),
                Err(e) if e.class() == crate::ErrorClass::Config => return Err(e),
                Err(_) => Member::Failed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ensemble = CostEnsemble {
        year: report.year,
        seed: opts.seed,
        epsilon: opts.epsilon,
        indices: Vec::new(),
        samples: Vec::new(),
        plan_samples: Vec::new(),
        failed: Vec::new(),
        observed: Array2::from_shape_fn(report.dims(), |(i, j)| {
            report.exporter_plan.is_observed(i, j) || report.importer_plan.is_observed(i, j)
        }),
    };
    for (k, m) in members.into_iter().enumerate() {
        match m {
            Member::Ok(c, p) => {
                ensemble.indices.push(k);
                ensemble.samples.push(c);
                ensemble.plan_samples.push(p);
            }
            Member::Failed => ensemble.failed.push(k),
        }
    }
    if !ensemble.failed.is_empty() {
        log::warn!(
            "{} of {} ensemble members failed for year {}",
            ensemble.failed.len(),
            opts.n,
            report.year
        );
    }
    Ok(ensemble)
}

/// Linear interpolation between closest ranks of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, unbiased standard deviation and quantiles of one entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryStats {
    pub mean: f64,
    pub std: f64,
    pub quantiles: Vec<f64>,
}

fn entry_stats(values: &mut [f64], probs: &[f64]) -> EntryStats {
    let n = values.len() as f64;
    if values.iter().all(|v| *v == values[0]) {
        return EntryStats {
            mean: values[0],
            std: 0.0,
            quantiles: vec![values[0]; probs.len()],
        };
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    values.sort_by(f64::total_cmp);
    EntryStats {
        mean,
        std: var.sqrt(),
        quantiles: probs.iter().map(|p| quantile(values, *p)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub year: i32,
    pub probabilities: Vec<f64>,
    /// Per-entry statistics; `None` where neither reporter observed the flow.
    pub cost: Array2<Option<EntryStats>>,
    pub flow: Array2<Option<EntryStats>>,
    pub members: usize,
    pub failed: usize,
}

pub const DEFAULT_QUANTILES: [f64; 2] = [0.05, 0.95];

pub fn summarize(ensemble: &CostEnsemble, probabilities: &[f64]) -> Result<EnsembleSummary> {
    let n = ensemble.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            found: n,
        });
    }
    let dims = ensemble.observed.dim();
    let stats = |get: &dyn Fn(usize, (usize, usize)) -> f64| {
        Array2::from_shape_fn(dims, |idx| {
            ensemble.observed[idx].then(|| {
                let mut v: Vec<f64> = (0..n).map(|k| get(k, idx)).collect();
                entry_stats(&mut v, probabilities)
            })
        })
    };
    Ok(EnsembleSummary {
        year: ensemble.year,
        probabilities: probabilities.to_vec(),
        cost: stats(&|k, idx| ensemble.samples[k].values()[idx]),
        flow: stats(&|k, idx| ensemble.plan_samples[k].raw_values()[idx]),
        members: n,
        failed: ensemble.failed.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSidecar {
    pub seed: u64,
    pub n: usize,
    pub epsilon: f64,
    pub fixed_marginals: bool,
    pub failures: usize,
    /// Failure count per year.
    pub failures_by_year: Vec<(i32, usize)>,
}

/// Writes `(year, i, j, mean_cost, std_cost, q05, q95, mean_flow, std_flow)`
/// rows (first and last requested quantile) for every observed entry.
pub fn write_summary_csv(path: &Path, summaries: &[EnsembleSummary], countries: &[String]) -> Result<()> {
    let mut out = String::from("year,i,j,mean_cost,std_cost,q05,q95,mean_flow,std_flow\n");
    for s in summaries {
        for ((i, j), cost) in s.cost.indexed_iter() {
            let (Some(c), Some(f)) = (cost, &s.flow[[i, j]]) else {
                continue;
            };
            let lo = c.quantiles.first().copied().unwrap_or(f64::NAN);
            let hi = c.quantiles.last().copied().unwrap_or(f64::NAN);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                s.year, countries[i], countries[j], c.mean, c.std, lo, hi, f.mean, f.std
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
