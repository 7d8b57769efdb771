//! Accuracy of estimated flows against reported data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DualReport, TradePanel};
use crate::ot::TransportPlan;

fn check_lengths(a: usize, b: usize, mask: usize) -> Result<()> {
    if a != b || a != mask {
        return Err(Error::shape(a, format!("{b} truths, {mask} mask entries")));
    }
    Ok(())
}

/// Root mean squared difference over entries where `mask` is true.
pub fn rmse(estimates: &[f64], truths: &[f64], mask: &[bool]) -> Result<f64> {
    check_lengths(estimates.len(), truths.len(), mask.len())?;
    let (mut sum, mut n) = (0.0, 0usize);
    for ((e, t), m) in estimates.iter().zip(truths).zip(mask) {
        if *m {
            sum += (e - t).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyComparison);
    }
    Ok((sum / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StdRmse {
    pub value: f64,
    pub included: usize,
    /// Entries with identical reports.
    pub zero_dispersion: usize,
    /// Entries observed by a single reporter.
    pub single_report: usize,
}

/// Per-entry center and sample standard deviation of the two reports, or
/// `None` unless both reporters observed the entry.
fn dispersion(report: &DualReport, r: usize, c: usize) -> Option<(f64, f64)> {
    let x = report.exporter_plan.get(r, c)?;
    let y = report.importer_plan.get(r, c)?;
    Some((0.5 * (x + y), (x - y).abs() / std::f64::consts::SQRT_2))
}

/// RMSE in units of the per-entry reporting dispersion, over `entries`.
fn rmse_in_std_over(
    estimate: &TransportPlan,
    report: &DualReport,
    entries: impl Iterator<Item = (usize, usize)>,
) -> Result<StdRmse> {
    let mut out = StdRmse {
        value: 0.0,
        included: 0,
        zero_dispersion: 0,
        single_report: 0,
    };
    let mut sum = 0.0;
    for (r, c) in entries {
        let Some(e) = estimate.get(r, c) else { continue };
        match dispersion(report, r, c) {
            None => out.single_report += 1,
            Some((_, s)) if s == 0.0 => out.zero_dispersion += 1,
            Some((center, s)) => {
                sum += ((e - center) / s).powi(2);
                out.included += 1;
            }
        }
    }
    if out.included == 0 {
        return Err(Error::EmptyComparison);
    }
    out.value = (sum / out.included as f64).sqrt();
    Ok(out)
}

/// RMSE in units of the reporting dispersion over every doubly observed
/// entry of `report`; entries with identical reports are excluded and
/// counted.
pub fn rmse_in_std(estimate: &TransportPlan, report: &DualReport) -> Result<StdRmse> {
    let (m, n) = report.dims();
    if estimate.dims() != (m, n) {
        return Err(Error::shape(format!("{m}x{n}"), format!("{:?}", estimate.dims())));
    }
    rmse_in_std_over(estimate, report, (0..m).flat_map(|r| (0..n).map(move |c| (r, c))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
    pub n: usize,
}

/// Ordinary least squares of truth on estimate, with the Pearson
/// correlation of the pairs.
pub fn linear_fit(estimates: &[f64], truths: &[f64], mask: &[bool]) -> Result<LinearFit> {
    check_lengths(estimates.len(), truths.len(), mask.len())?;
    let pairs: Vec<(f64, f64)> = estimates
        .iter()
        .zip(truths)
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|((e, t), _)| (*e, *t))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            found: pairs.len(),
        });
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateVariance("estimates"));
    }
    if syy == 0.0 {
        return Err(Error::DegenerateVariance("truths"));
    }
    let slope = sxy / sxx;
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        pearson_r: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        n: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub median: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyComparison);
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Ok(Self { mean, std, median, n })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareOptions {
    /// Compare only strictly positive reported links.
    pub positive_only: bool,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { positive_only: true }
    }
}

/// Yearly flow estimates of one model.
#[derive(Debug, Clone, Copy)]
pub struct ModelOutput<'a> {
    pub name: &'a str,
    pub plans: &'a [TransportPlan],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub year: i32,
    pub exporter: String,
    pub compared: usize,
    pub rmse: f64,
    pub rmse_in_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    /// Aggregate of per-(exporter, year) RMSE.
    pub rmse: Aggregate,
    /// RMSE pooled over all compared entries.
    pub rmse_pooled: f64,
    pub rmse_in_std: Option<Aggregate>,
    pub fit: LinearFit,
    pub compared: usize,
    pub zero_dispersion: usize,
    pub single_report: usize,
    pub groups: Vec<GroupMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub commodity: String,
    pub positive_only: bool,
    pub models: Vec<ModelMetrics>,
}

/// Entries compared for one year, row by row.
fn compared_entries(report: &DualReport, opts: &CompareOptions) -> Vec<Vec<(usize, f64)>> {
    let (m, n) = report.dims();
    (0..m)
        .map(|r| {
            (0..n)
                .filter_map(|c| report.averaged(r, c).map(|t| (c, t)))
                .filter(|(_, t)| !opts.positive_only || *t > 0.0)
                .collect()
        })
        .collect()
}

fn check_alignment(panel: &TradePanel, model: &ModelOutput) -> Result<()> {
    if model.plans.len() != panel.len() {
        return Err(Error::AlignmentMismatch(format!(
            "{} has {} years, panel has {}",
            model.name,
            model.plans.len(),
            panel.len()
        )));
    }
    if let Some(p) = model.plans.iter().find(|p| p.dims() != panel.dims()) {
        return Err(Error::AlignmentMismatch(format!(
            "{} plan is {:?}, panel is {:?}",
            model.name,
            p.dims(),
            panel.dims()
        )));
    }
    Ok(())
}

fn estimate(model: &ModelOutput, t: usize, r: usize, c: usize, year: i32) -> Result<f64> {
    model.plans[t].get(r, c).ok_or_else(|| {
        Error::AlignmentMismatch(format!("{} has no estimate for ({r}, {c}) in {year}", model.name))
    })
}

fn model_metrics(panel: &TradePanel, model: &ModelOutput, opts: &CompareOptions) -> Result<ModelMetrics> {
    check_alignment(panel, model)?;
    let countries = panel.country_index.countries();
    let (mut est_all, mut truth_all) = (Vec::new(), Vec::new());
    let mut groups = Vec::new();
    let (mut zero_dispersion, mut single_report) = (0, 0);
    for (t, report) in panel.reports.iter().enumerate() {
        for (r, row) in compared_entries(report, opts).into_iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            let mut est = Vec::with_capacity(row.len());
            for (c, _) in &row {
                est.push(estimate(model, t, r, *c, report.year)?);
            }
            let truth: Vec<f64> = row.iter().map(|(_, v)| *v).collect();
            let std_rmse = match rmse_in_std_over(&model.plans[t], report, row.iter().map(|(c, _)| (r, *c))) {
                Ok(s) => {
                    zero_dispersion += s.zero_dispersion;
                    single_report += s.single_report;
                    Some(s.value)
                }
                Err(Error::EmptyComparison) => None,
                Err(e) => return Err(e),
            };
            groups.push(GroupMetrics {
                year: report.year,
                exporter: countries[r].clone(),
                compared: row.len(),
                rmse: rmse(&est, &truth, &vec![true; row.len()])?,
                rmse_in_std: std_rmse,
            });
            est_all.extend(est);
            truth_all.extend(truth);
        }
    }
    let all = vec![true; est_all.len()];
    let rmse_values: Vec<f64> = groups.iter().map(|g| g.rmse).collect();
    let std_values: Vec<f64> = groups.iter().filter_map(|g| g.rmse_in_std).collect();
    Ok(ModelMetrics {
        model: model.name.to_string(),
        rmse: Aggregate::of(&rmse_values)?,
        rmse_pooled: rmse(&est_all, &truth_all, &all)?,
        rmse_in_std: Aggregate::of(&std_values).ok(),
        fit: linear_fit(&est_all, &truth_all, &all)?,
        compared: est_all.len(),
        zero_dispersion,
        single_report,
        groups,
    })
}

/// Compares every model against the reporter-averaged panel flows, with
/// RMSE computed per (exporter, year) and aggregated.
pub fn compare_models(
    commodity: &str,
    panel: &TradePanel,
    models: &[ModelOutput],
    opts: &CompareOptions,
) -> Result<ComparisonReport> {
    if models.is_empty() {
        return Err(Error::EmptyComparison);
    }
    Ok(ComparisonReport {
        commodity: commodity.to_string(),
        positive_only: opts.positive_only,
        models: models
            .iter()
            .map(|m| model_metrics(panel, m, opts))
            .collect::<Result<_>>()?,
    })
}

/// Writes `(commodity, model, metric, mean, std, median, n)` rows.
pub fn write_report_csv(path: &Path, reports: &[ComparisonReport]) -> Result<()> {
    let mut out = String::from("commodity,model,metric,mean,std,median,n\n");
    for rep in reports {
        for m in &rep.models {
            let mut row = |metric: &str, a: Aggregate| {
                out.push_str(&format!(
                    "{},{},{metric},{},{},{},{}\n",
                    rep.commodity, m.model, a.mean, a.std, a.median, a.n
                ));
            };
            row("rmse", m.rmse);
            if let Some(a) = m.rmse_in_std {
                row("rmse_in_std", a);
            }
            let single = |v: f64| Aggregate {
                mean: v,
                std: 0.0,
                median: v,
                n: m.compared,
            };
            row("rmse_pooled", single(m.rmse_pooled));
            row("slope", single(m.fit.slope));
            row("intercept", single(m.fit.intercept));
            row("pearson_r", single(m.fit.pearson_r));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_report_json(path: &Path, reports: &[ComparisonReport]) -> Result<()> {
    let text = serde_json::to_string_pretty(reports).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes `(estimate, truth, commodity, model)` for every compared entry.
pub fn write_scatter_csv(
    path: &Path,
    commodity: &str,
    panel: &TradePanel,
    models: &[ModelOutput],
    opts: &CompareOptions,
) -> Result<()> {
    let mut out = String::from("estimate,truth,commodity,model\n");
    for model in models {
        check_alignment(panel, model)?;
        for (t, report) in panel.reports.iter().enumerate() {
            for (r, row) in compared_entries(report, opts).into_iter().enumerate() {
                for (c, truth) in row {
                    let e = estimate(model, t, r, c, report.year)?;
                    out.push_str(&format!("{e},{truth},{commodity},{}\n", model.name));
                }
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
