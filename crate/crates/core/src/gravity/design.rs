use std::collections::{BTreeMap, HashMap};
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::CovariateRow;
use crate::error::{Error, Result};
use crate::ingest::{marginals_from_plan, TradePanel};

/// Names of the dense covariate block, in column order.
pub const DENSE_COLUMNS: [&str; 9] = [
    "log_output",
    "log_expenditure",
    "log_distance",
    "contiguity",
    "colony",
    "language",
    "rta",
    "log_remoteness",
    "log_tariff",
];

/// Offset added to tariffs before taking logarithms.
pub const TARIFF_OFFSET: f64 = 1.0;

/// Distance-weighted average of exporter outputs: `chi_j = sum_i d_ij O_i / sum_k O_k`.
pub fn remoteness(distances: &Array2<f64>, outputs: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = distances.dim();
    if outputs.len() != m {
        return Err(Error::shape(format!("{m} outputs"), outputs.len()));
    }
    if outputs.iter().any(|o| !(o.is_finite() && *o >= 0.0)) {
        return Err(Error::InvalidInput("outputs must be finite and nonnegative".into()));
    }
    if distances.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::InvalidInput("distances must be positive".into()));
    }
    let total: f64 = outputs.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroTotalOutput);
    }
    Ok((0..n)
        .map(|j| (0..m).map(|i| distances[[i, j]] * outputs[i]).sum::<f64>() / total)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GravityObservation {
    pub exporter: String,
    pub importer: String,
    pub year: i32,
    /// Panel row and column of the flow.
    pub row: usize,
    pub col: usize,
    pub flow: f64,
    pub output: f64,
    pub expenditure: f64,
    pub dist_km: f64,
    pub contig: u8,
    pub colony: u8,
    pub comlang: u8,
    pub rta: u8,
    pub remoteness: f64,
    pub tariff: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationOptions {
    /// Drop zero flows, matching the loss of the inverse model.
    pub positive_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub observations: Vec<GravityObservation>,
    /// Observed flows skipped because the exporter output or importer
    /// expenditure is zero.
    pub zero_mass_skipped: usize,
}

fn key(e: &str, i: &str, year: i32) -> String {
    format!("{e}->{i}@{year}")
}

/// Joins the observed flows of a panel with bilateral covariates.
///
/// Flows are reporter averages; outputs and expenditures are the
/// reporter-averaged row and column sums of each year.
pub fn gravity_observations(
    panel: &TradePanel,
    covariates: &[CovariateRow],
    opts: &ObservationOptions,
) -> Result<ObservationSet> {
    let table: HashMap<(&str, &str, i32), &CovariateRow> = covariates
        .iter()
        .map(|c| ((c.exporter.as_str(), c.importer.as_str(), c.year), c))
        .collect();
    let countries = panel.country_index.countries();
    let mut missing = Vec::new();
    let mut observations = Vec::new();
    let mut zero_mass_skipped = 0;
    for report in &panel.reports {
        let year = report.year;
        let (e, i) = (&report.exporter_plan, &report.importer_plan);
        let (me, mi) = (marginals_from_plan(e)?, marginals_from_plan(i)?);
        let output: Vec<f64> = me.supply().iter().zip(mi.supply()).map(|(a, b)| 0.5 * (a + b)).collect();
        let expenditure: Vec<f64> = me.demand().iter().zip(mi.demand()).map(|(a, b)| 0.5 * (a + b)).collect();
        let (m, n) = report.dims();
        let lookup = |r: usize, c: usize| table.get(&(countries[r].as_str(), countries[c].as_str(), year));

        let mut distances = Array2::from_elem((m, n), 1.0);
        for r in (0..m).filter(|r| output[*r] > 0.0) {
            for c in 0..n {
                match lookup(r, c) {
                    Some(row) => distances[[r, c]] = row.dist_km,
                    None => missing.push(key(&countries[r], &countries[c], year)),
                }
            }
        }
        if !missing.is_empty() {
            continue;
        }
        let chi = remoteness(&distances, &output)?;

        for r in 0..m {
            for c in 0..n {
                let Some(flow) = report.averaged(r, c) else { continue };
                if opts.positive_only && flow <= 0.0 {
                    continue;
                }
                if output[r] <= 0.0 || expenditure[c] <= 0.0 {
                    zero_mass_skipped += 1;
                    continue;
                }
                let Some(cov) = lookup(r, c) else {
                    missing.push(key(&countries[r], &countries[c], year));
                    continue;
                };
                observations.push(GravityObservation {
                    exporter: countries[r].clone(),
                    importer: countries[c].clone(),
                    year,
                    row: r,
                    col: c,
                    flow,
                    output: output[r],
                    expenditure: expenditure[c],
                    dist_km: cov.dist_km,
                    contig: cov.contig,
                    colony: cov.colony,
                    comlang: cov.comlang,
                    rta: cov.rta,
                    remoteness: chi[c],
                    tariff: cov.tariff,
                });
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(Error::MissingCovariate { keys: missing });
    }
    Ok(ObservationSet {
        observations,
        zero_mass_skipped,
    })
}

/// One column of a gravity design.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Column {
    Intercept { year: i32 },
    Dense { name: String },
    Exporter { country: String, year: i32 },
    Importer { country: String, year: i32 },
}

impl Column {
    pub fn is_fixed_effect(&self) -> bool {
        matches!(self, Column::Exporter { .. } | Column::Importer { .. })
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::Intercept { year } => write!(f, "intercept[{year}]"),
            Column::Dense { name } => f.write_str(name),
            Column::Exporter { country, year } => write!(f, "exporter[{country},{year}]"),
            Column::Importer { country, year } => write!(f, "importer[{country},{year}]"),
        }
    }
}

/// Which level of each fixed-effect group is absorbed by the intercept.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceLevel {
    #[default]
    First,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignOptions {
    /// Include time-dependent exporter and importer fixed effects.
    pub fixed_effects: bool,
    pub reference: ReferenceLevel,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            fixed_effects: true,
            reference: ReferenceLevel::First,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowKey {
    pub exporter: String,
    pub importer: String,
    pub year: i32,
    pub row: usize,
    pub col: usize,
}

/// Regression design with a year intercept, a dense covariate block and
/// sparse fixed-effect dummies (at most one exporter and one importer
/// column per row).
#[derive(Debug, Clone, PartialEq)]
pub struct GravityDesign {
    pub columns: Vec<Column>,
    pub keys: Vec<RowKey>,
    pub response: Vec<f64>,
    pub intercept: Vec<usize>,
    /// `rows x k` values of the dense block, stored at columns
    /// `dense_offset..dense_offset + k`.
    pub dense: Array2<f64>,
    pub dense_offset: usize,
    pub exporter_fe: Vec<Option<usize>>,
    pub importer_fe: Vec<Option<usize>>,
    /// Dropped reference levels.
    pub references: Vec<Column>,
}

impl GravityDesign {
    /// Checks the internal consistency of a hand-built design.
    pub fn validate(&self) -> Result<()> {
        let n = self.response.len();
        let p = self.columns.len();
        let k = self.dense.ncols();
        let lens = [self.keys.len(), self.intercept.len(), self.dense.nrows(), self.exporter_fe.len(), self.importer_fe.len()];
        if lens.iter().any(|l| *l != n) {
            return Err(Error::InvalidInput("design row counts disagree".into()));
        }
        if n == 0 {
            return Err(Error::EmptyPanel);
        }
        if self.dense_offset + k > p {
            return Err(Error::InvalidInput("dense block exceeds the column list".into()));
        }
        let in_range = |c: &usize| *c < p;
        let fe_ok = self
            .exporter_fe
            .iter()
            .chain(&self.importer_fe)
            .flatten()
            .all(|c| in_range(c) && self.columns[*c].is_fixed_effect());
        let icpt_ok = self
            .intercept
            .iter()
            .all(|c| in_range(c) && matches!(self.columns[*c], Column::Intercept { .. }));
        if !fe_ok || !icpt_ok {
            return Err(Error::InvalidInput("design column indices are inconsistent".into()));
        }
        if self.response.iter().any(|y| !(y.is_finite() && *y >= 0.0)) || self.dense.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("design values must be finite and flows nonnegative".into()));
        }
        Ok(())
    }

    /// Single-intercept design with no covariates.
    pub fn intercept_only(response: Vec<f64>) -> Result<Self> {
        let n = response.len();
        let design = Self {
            columns: vec![Column::Intercept { year: 0 }],
            keys: (0..n)
                .map(|r| RowKey {
                    exporter: String::new(),
                    importer: String::new(),
                    year: 0,
                    row: r,
                    col: 0,
                })
                .collect(),
            response,
            intercept: vec![0; n],
            dense: Array2::zeros((n, 0)),
            dense_offset: 1,
            exporter_fe: vec![None; n],
            importer_fe: vec![None; n],
            references: Vec::new(),
        };
        design.validate()?;
        Ok(design)
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn dense_names(&self) -> Vec<String> {
        self.columns[self.dense_offset..self.dense_offset + self.dense.ncols()]
            .iter()
            .map(|c| c.to_string())
            .collect()
    }

    pub fn fixed_effect_columns(&self) -> usize {
        self.columns.iter().filter(|c| c.is_fixed_effect()).count()
    }

    /// Nonzero entries of row `r` as `(column, value)`.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let dense = self.dense.row(r);
        std::iter::once((self.intercept[r], 1.0))
            .chain(dense.into_iter().enumerate().map(move |(k, v)| (self.dense_offset + k, *v)))
            .chain(self.exporter_fe[r].map(|c| (c, 1.0)))
            .chain(self.importer_fe[r].map(|c| (c, 1.0)))
    }

    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n_rows())
            .map(|r| self.row_entries(r).map(|(c, v)| beta[c] * v).sum())
            .collect()
    }

    /// Recovers the bilateral covariate rows of a design built by
    /// [`build_design`].
    pub fn decode_covariates(&self) -> Result<Vec<CovariateRow>> {
        if self.dense_names() != DENSE_COLUMNS {
            return Err(Error::InvalidInput("design does not carry the gravity covariates".into()));
        }
        let binary = |v: f64| v as u8;
        Ok(self
            .keys
            .iter()
            .zip(self.dense.rows())
            .map(|(k, x)| CovariateRow {
                exporter: k.exporter.clone(),
                importer: k.importer.clone(),
                year: k.year,
                dist_km: x[2].exp(),
                contig: binary(x[3]),
                colony: binary(x[4]),
                comlang: binary(x[5]),
                rta: binary(x[6]),
                tariff: x[8].exp() - TARIFF_OFFSET,
            })
            .collect())
    }
}

fn positive_log(v: f64, what: &str, o: &GravityObservation) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v.ln())
    } else {
        Err(Error::InvalidInput(format!(
            "{what} must be positive for {}",
            key(&o.exporter, &o.importer, o.year)
        )))
    }
}

fn dense_row(o: &GravityObservation) -> Result<[f64; 9]> {
    Ok([
        positive_log(o.output, "output", o)?,
        positive_log(o.expenditure, "expenditure", o)?,
        positive_log(o.dist_km, "distance", o)?,
        o.contig as f64,
        o.colony as f64,
        o.comlang as f64,
        o.rta as f64,
        positive_log(o.remoteness, "remoteness", o)?,
        positive_log(o.tariff + TARIFF_OFFSET, "tariff", o)?,
    ])
}

/// Levels of one fixed-effect group in order of first appearance.
fn levels<'a>(names: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = Vec::new();
    for n in names {
        if !seen.contains(&n) {
            seen.push(n);
        }
    }
    seen
}

pub fn build_design(observations: &[GravityObservation], opts: &DesignOptions) -> Result<GravityDesign> {
    if observations.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let n = observations.len();
    let mut years: Vec<i32> = observations.iter().map(|o| o.year).collect();
    years.sort_unstable();
    years.dedup();
    let mut columns: Vec<Column> = years.iter().map(|y| Column::Intercept { year: *y }).collect();
    let dense_offset = columns.len();
    columns.extend(DENSE_COLUMNS.iter().map(|c| Column::Dense { name: c.to_string() }));

    let mut references = Vec::new();
    let mut fe_index: HashMap<Column, usize> = HashMap::new();
    if opts.fixed_effects {
        for year in &years {
            let in_year = || observations.iter().filter(|o| o.year == *year);
            let groups: [(Vec<&str>, fn(String, i32) -> Column); 2] = [
                (levels(in_year().map(|o| o.exporter.as_str())), |country, year| Column::Exporter { country, year }),
                (levels(in_year().map(|o| o.importer.as_str())), |country, year| Column::Importer { country, year }),
            ];
            for (lv, make) in groups {
                let reference = match opts.reference {
                    ReferenceLevel::First => 0,
                    ReferenceLevel::Last => lv.len() - 1,
                };
                for (k, country) in lv.iter().enumerate() {
                    let col = make(country.to_string(), *year);
                    if k == reference {
                        references.push(col);
                    } else {
                        fe_index.insert(col.clone(), columns.len());
                        columns.push(col);
                    }
                }
            }
        }
    }

    let year_col: BTreeMap<i32, usize> = years.iter().enumerate().map(|(k, y)| (*y, k)).collect();
    let mut dense = Array2::zeros((n, DENSE_COLUMNS.len()));
    let mut exporter_fe = Vec::with_capacity(n);
    let mut importer_fe = Vec::with_capacity(n);
    for (r, o) in observations.iter().enumerate() {
        for (k, v) in dense_row(o)?.into_iter().enumerate() {
            dense[[r, k]] = v;
        }
        let lookup = |col: Column| fe_index.get(&col).copied();
        exporter_fe.push(lookup(Column::Exporter {
            country: o.exporter.clone(),
            year: o.year,
        }));
        importer_fe.push(lookup(Column::Importer {
            country: o.importer.clone(),
            year: o.year,
        }));
    }
    let design = GravityDesign {
        columns,
        keys: observations
            .iter()
            .map(|o| RowKey {
                exporter: o.exporter.clone(),
                importer: o.importer.clone(),
                year: o.year,
                row: o.row,
                col: o.col,
            })
            .collect(),
        response: observations.iter().map(|o| o.flow).collect(),
        intercept: observations.iter().map(|o| year_col[&o.year]).collect(),
        dense,
        dense_offset,
        exporter_fe,
        importer_fe,
        references,
    };
    design.validate()?;
    Ok(design)
}
