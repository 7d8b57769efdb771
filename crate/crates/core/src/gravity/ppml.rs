use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::design::{Column, GravityDesign};
use crate::error::{Error, Result};
use crate::ingest::TradePanel;
use crate::ot::TransportPlan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpmlOptions {
    pub max_iterations: usize,
    /// Bound on `max_k |sum_r (y_r - mu_r) x_rk| / sum_r y_r`.
    pub tolerance: f64,
    /// Columns whose squared correlation with the preceding retained columns
    /// exceeds `1 - collinearity_tolerance` are collinear.
    pub collinearity_tolerance: f64,
}

impl Default for PpmlOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-8,
            collinearity_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GravityFit {
    pub columns: Vec<Column>,
    /// One coefficient per design column; aliased columns hold zero.
    pub coefficients: Vec<f64>,
    /// Heteroskedasticity-robust (HC1) standard errors; `None` for aliased
    /// columns or when there are no residual degrees of freedom.
    pub standard_errors: Vec<Option<f64>>,
    /// Fixed-effect columns dropped as linear combinations of earlier columns.
    pub aliased: Vec<Column>,
    pub dense_names: Vec<String>,
    pub lambda: Vec<f64>,
    pub lambda_se: Vec<Option<f64>>,
    pub fitted_means: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Final normalized score.
    pub score: f64,
    pub deviance: f64,
    pub observations: usize,
}

impl GravityFit {
    pub fn coefficient(&self, column: &Column) -> Option<f64> {
        self.columns.iter().position(|c| c == column).map(|k| self.coefficients[k])
    }

    pub fn fixed_effects(&self) -> Vec<(Column, f64)> {
        self.columns
            .iter()
            .zip(&self.coefficients)
            .filter(|(c, _)| c.is_fixed_effect())
            .map(|(c, v)| (c.clone(), *v))
            .collect()
    }
}

fn row_list(design: &GravityDesign, r: usize, pos: &[Option<usize>]) -> Vec<(usize, f64)> {
    design
        .row_entries(r)
        .filter_map(|(c, v)| pos[c].map(|k| (k, v)))
        .collect()
}

/// `sum_r w_r x_r x_r'` over the retained columns.
fn weighted_gram(design: &GravityDesign, pos: &[Option<usize>], q: usize, weight: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(q, q);
    for r in 0..design.n_rows() {
        let w = weight(r);
        let row = row_list(design, r, pos);
        for (a, va) in &row {
            for (b, vb) in &row {
                g[(*a, *b)] += w * va * vb;
            }
        }
    }
    g
}

/// Flags each column as independent of the retained columns before it, by
/// an incremental Cholesky factorization of the correlation-scaled Gram
/// matrix.
fn independent_columns(gram: &DMatrix<f64>, tol: f64) -> Vec<bool> {
    let p = gram.nrows();
    let scale: Vec<f64> = (0..p).map(|k| gram[(k, k)].sqrt()).collect();
    let mut keep = vec![false; p];
    let mut kept: Vec<usize> = Vec::new();
    let mut factor: Vec<Vec<f64>> = Vec::new();
    for k in 0..p {
        if scale[k] == 0.0 {
            continue;
        }
        let mut l = Vec::with_capacity(kept.len() + 1);
        for (a, j) in kept.iter().enumerate() {
            let g = gram[(k, *j)] / (scale[k] * scale[*j]);
            let s: f64 = l.iter().zip(&factor[a]).map(|(x, y)| x * y).sum();
            l.push((g - s) / factor[a][a]);
        }
        let d = 1.0 - l.iter().map(|x| x * x).sum::<f64>();
        if d > tol {
            l.push(d.sqrt());
            factor.push(l);
            kept.push(k);
            keep[k] = true;
        }
    }
    keep
}

/// Fixed-effect cells (including reference levels) and years whose flows
/// are all zero.
fn separated_cells(design: &GravityDesign) -> Vec<String> {
    let mut totals: HashMap<String, f64> = HashMap::new();
    let has_fe = !design.references.is_empty() || design.fixed_effect_columns() > 0;
    for (r, y) in design.response.iter().enumerate() {
        let k = &design.keys[r];
        *totals.entry(design.columns[design.intercept[r]].to_string()).or_default() += y;
        if has_fe {
            let e = Column::Exporter {
                country: k.exporter.clone(),
                year: k.year,
            };
            let i = Column::Importer {
                country: k.importer.clone(),
                year: k.year,
            };
            *totals.entry(e.to_string()).or_default() += y;
            *totals.entry(i.to_string()).or_default() += y;
        }
    }
    let mut cells: Vec<String> = totals.into_iter().filter(|(_, t)| *t <= 0.0).map(|(c, _)| c).collect();
    cells.sort();
    cells
}

fn deviance(y: &[f64], mu: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .map(|(y, m)| {
            let t = if *y > 0.0 { y * (y / m).ln() } else { 0.0 };
            2.0 * (t - (y - m))
        })
        .sum()
}

struct State {
    beta: Vec<f64>,
    mu: Vec<f64>,
    deviance: f64,
}

impl State {
    fn new(design: &GravityDesign, beta: Vec<f64>) -> Option<Self> {
        let mu: Vec<f64> = design.linear_predictor(&beta).into_iter().map(f64::exp).collect();
        if mu.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return None;
        }
        let deviance = deviance(&design.response, &mu);
        Some(Self { beta, mu, deviance })
    }
}

fn score(design: &GravityDesign, pos: &[Option<usize>], q: usize, mu: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; q];
    for r in 0..design.n_rows() {
        let e = design.response[r] - mu[r];
        for (k, v) in row_list(design, r, pos) {
            s[k] += e * v;
        }
    }
    s
}

/// Poisson pseudo maximum likelihood by iteratively reweighted least
/// squares (Newton steps with step halving on the deviance).
pub fn ppml_fit(design: &GravityDesign, opts: &PpmlOptions) -> Result<GravityFit> {
    design.validate()?;
    if opts.max_iterations == 0 || !(opts.tolerance > 0.0) || !(opts.collinearity_tolerance > 0.0) {
        return Err(Error::InvalidInput("invalid PPML options".into()));
    }
    let cells = separated_cells(design);
    if !cells.is_empty() {
        return Err(Error::Separation { cells });
    }
    let n = design.n_rows();
    let p = design.n_columns();
    let all: Vec<Option<usize>> = (0..p).map(Some).collect();
    let keep = independent_columns(&weighted_gram(design, &all, p, |_| 1.0), opts.collinearity_tolerance);
    let collinear: Vec<String> = (0..p)
        .filter(|k| !keep[*k] && !design.columns[*k].is_fixed_effect())
        .map(|k| design.columns[k].to_string())
        .collect();
    if !collinear.is_empty() {
        return Err(Error::RankDeficient { columns: collinear });
    }
    let aliased: Vec<Column> = (0..p).filter(|k| !keep[*k]).map(|k| design.columns[k].clone()).collect();
    if !aliased.is_empty() {
        log::info!("dropping {} aliased fixed-effect columns", aliased.len());
    }
    let mut pos = vec![None; p];
    let mut kept = Vec::new();
    for k in (0..p).filter(|k| keep[*k]) {
        pos[k] = Some(kept.len());
        kept.push(k);
    }
    let q = kept.len();

    let mut beta = vec![0.0; p];
    let mut year_sums: HashMap<usize, (f64, f64)> = HashMap::new();
    for (r, y) in design.response.iter().enumerate() {
        let e = year_sums.entry(design.intercept[r]).or_default();
        e.0 += y;
        e.1 += 1.0;
    }
    for (c, (s, m)) in year_sums {
        beta[c] = (s / m).ln();
    }
    let diverged = || Error::Separation {
        cells: vec!["fitted means left the representable range".into()],
    };
    let mut state = State::new(design, beta).ok_or_else(diverged)?;
    let total: f64 = design.response.iter().sum();
    let crit = |s: &[f64]| s.iter().fold(0.0f64, |a, v| a.max(v.abs())) / total;

    let mut s = score(design, &pos, q, &state.mu);
    let mut current = crit(&s);
    let mut iterations = 0;
    let mut polish = 0;
    while iterations < opts.max_iterations {
        if current <= opts.tolerance {
            // Extra Newton steps push the score toward rounding level.
            if polish == 2 || current == 0.0 {
                break;
            }
            polish += 1;
        }
        iterations += 1;
        let h = weighted_gram(design, &pos, q, |r| state.mu[r]);
        let chol = h.cholesky().ok_or_else(diverged)?;
        let delta = chol.solve(&DVector::from_column_slice(&s));
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let mut b = state.beta.clone();
            for (a, k) in kept.iter().enumerate() {
                b[*k] += step * delta[a];
            }
            if let Some(cand) = State::new(design, b) {
                if cand.deviance <= state.deviance + 1e-12 * state.deviance.abs().max(1.0) {
                    next = Some(cand);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(cand) = next else {
            if current <= opts.tolerance {
                break;
            }
            return Err(diverged());
        };
        let cs = score(design, &pos, q, &cand.mu);
        let c = crit(&cs);
        if current <= opts.tolerance && c >= current {
            break;
        }
        state = cand;
        s = cs;
        current = c;
    }
    if current > opts.tolerance {
        return Err(Error::IrlsNonConvergence {
            iterations,
            score: current,
        });
    }

    let h = weighted_gram(design, &pos, q, |r| state.mu[r]);
    let bread = h.cholesky().ok_or_else(diverged)?.inverse();
    let meat = weighted_gram(design, &pos, q, |r| (design.response[r] - state.mu[r]).powi(2));
    let mut se = vec![None; p];
    if n > q {
        let v = &bread * meat * &bread * (n as f64 / (n - q) as f64);
        for (a, k) in kept.iter().enumerate() {
            se[*k] = Some(v[(a, a)].max(0.0).sqrt());
        }
    }
    let dense = design.dense_offset..design.dense_offset + design.dense.ncols();
    Ok(GravityFit {
        columns: design.columns.clone(),
        lambda: state.beta[dense.clone()].to_vec(),
        lambda_se: se[dense].to_vec(),
        coefficients: state.beta,
        standard_errors: se,
        aliased,
        dense_names: design.dense_names(),
        fitted_means: state.mu,
        converged: true,
        iterations,
        score: current,
        deviance: state.deviance,
        observations: n,
    })
}

/// Exponentiated linear predictor of every design row.
pub fn gravity_predict(fit: &GravityFit, design: &GravityDesign) -> Result<Vec<f64>> {
    if fit.columns != design.columns {
        return Err(Error::AlignmentMismatch("fit and design columns differ".into()));
    }
    Ok(design
        .linear_predictor(&fit.coefficients)
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Places per-row predictions into masked yearly plans shaped like `panel`.
pub fn predicted_plans(design: &GravityDesign, predictions: &[f64], panel: &TradePanel) -> Result<Vec<TransportPlan>> {
    if predictions.len() != design.n_rows() {
        return Err(Error::shape(design.n_rows(), predictions.len()));
    }
    let dims = panel.dims();
    let mut grids: Vec<(Array2<f64>, Array2<bool>)> = panel
        .reports
        .iter()
        .map(|_| (Array2::zeros(dims), Array2::from_elem(dims, false)))
        .collect();
    for (k, v) in design.keys.iter().zip(predictions) {
        let t = panel
            .years
            .iter()
            .position(|y| *y == k.year)
            .ok_or_else(|| Error::AlignmentMismatch(format!("year {} not in panel", k.year)))?;
        if k.row >= dims.0 || k.col >= dims.1 {
            return Err(Error::AlignmentMismatch(format!("entry ({}, {}) outside panel", k.row, k.col)));
        }
        grids[t].0[[k.row, k.col]] = *v;
        grids[t].1[[k.row, k.col]] = true;
    }
    grids
        .into_iter()
        .map(|(values, mask)| TransportPlan::masked(values, mask))
        .collect()
}

/// Coefficient table: one row per dense covariate, a value and a standard
/// error column per commodity.
pub fn write_coefficient_table(path: &Path, fits: &[(String, &GravityFit)]) -> Result<()> {
    let mut out = String::from("coefficient");
    for (name, _) in fits {
        out.push_str(&format!(",{name},{name}_se"));
    }
    out.push('\n');
    let names = fits.first().map(|(_, f)| f.dense_names.clone()).unwrap_or_default();
    let fmt_se = |s: Option<f64>| s.map(|v| v.to_string()).unwrap_or_default();
    for (k, name) in names.iter().enumerate() {
        out.push_str(name);
        for (_, fit) in fits {
            out.push_str(&format!(",{},{}", fit.lambda[k], fmt_se(fit.lambda_se[k])));
        }
        out.push('\n');
    }
    out.push_str("observations");
    for (_, fit) in fits {
        out.push_str(&format!(",{},", fit.observations));
    }
    out.push('\n');
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
