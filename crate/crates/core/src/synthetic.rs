//! Synthetic panels with known costs.
//!
//! Each year's cost has rows summing to one, marginals are drawn at random,
//! and the flows are the converged entropic plan. Optional multiplicative
//! noise splits each plan into discrepant exporter and importer views.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gravity::{CovariateRow, GravityObservation};
use crate::ingest::{pool_countries, DualReport, Element, Provenance, TradePanel, TradeRecord, OTHER};
use crate::ot::{sinkhorn, CostMatrix, Marginals, SolverOptions, TransportPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Number of countries including the trailing `"Other"`.
    pub countries: usize,
    pub years: usize,
    pub first_year: i32,
    pub epsilon: f64,
    /// Standard deviation of the log-normal reporting noise (0 = identical views).
    pub noise: f64,
    /// Grand total of each year's flows.
    pub total_mass: f64,
    /// Log-scale dispersion of supply and demand shares.
    pub mass_dispersion: f64,
    /// Half-width of the uniform draw of unnormalised cost entries around 1.
    pub cost_spread: f64,
    /// Log-scale year-to-year perturbation of costs and shares.
    pub drift: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            countries: 5,
            years: 3,
            first_year: 2000,
            epsilon: 0.1,
            noise: 0.0,
            total_mass: 1000.0,
            mass_dispersion: 0.5,
            cost_spread: 0.8,
            drift: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.countries >= 2
            && self.years >= 1
            && self.epsilon > 0.0
            && self.noise >= 0.0
            && self.total_mass > 0.0
            && self.mass_dispersion >= 0.0
            && (0.0..1.0).contains(&self.cost_spread)
            && self.drift >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("invalid synthetic configuration".into()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPanel {
    pub panel: TradePanel,
    pub true_costs: Vec<Array2<f64>>,
    /// Noise-free plans, one per year.
    pub true_plans: Vec<Array2<f64>>,
    pub covariates: Vec<CovariateRow>,
    /// Trade records equivalent to the panel's two views.
    pub records: Vec<TradeRecord>,
}

pub fn country_ids(count: usize) -> Vec<String> {
    (1..count)
        .map(|i| format!("C{i:02}"))
        .chain(std::iter::once(OTHER.to_string()))
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn shares(base: &[f64], drift: f64, rng: &mut ChaCha8Rng, total: f64) -> Vec<f64> {
    let w: Vec<f64> = base.iter().map(|b| b * (drift * normal(rng)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| total * v / s).collect()
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticPanel> {
    cfg.validate()?;
    let k = cfg.countries;
    let ids = country_ids(k);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base_cost = Array2::from_shape_fn((k, k), |_| rng.random_range(1.0 - cfg.cost_spread..=1.0 + cfg.cost_spread));
    let supply_base: Vec<f64> = (0..k).map(|_| (cfg.mass_dispersion * normal(&mut rng)).exp()).collect();
    let demand_base: Vec<f64> = (0..k).map(|_| (cfg.mass_dispersion * normal(&mut rng)).exp()).collect();
    let positions: Vec<(f64, f64)> = (0..k)
        .map(|_| (rng.random_range(0.0..5000.0), rng.random_range(0.0..5000.0)))
        .collect();
    let opts = SolverOptions {
        tolerance: 1e-13,
        max_iterations: 1_000_000,
        ..Default::default()
    };

    let mut reports = Vec::with_capacity(cfg.years);
    let mut true_costs = Vec::with_capacity(cfg.years);
    let mut true_plans = Vec::with_capacity(cfg.years);
    let mut records = Vec::new();
    for t in 0..cfg.years {
        let year = cfg.first_year + t as i32;
        let mut cost = base_cost.mapv(|b| b * (cfg.drift * normal(&mut rng)).exp());
        for mut row in cost.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let supply = shares(&supply_base, cfg.drift, &mut rng, cfg.total_mass);
        let demand = shares(&demand_base, cfg.drift, &mut rng, cfg.total_mass);
        let marginals = Marginals::new(supply, demand)?;
        let plan = sinkhorn(&CostMatrix::new(cost.clone(), cfg.epsilon)?, &marginals, &opts)?
            .plan
            .raw_values()
            .clone();
        let mut view = |plan: &Array2<f64>| {
            if cfg.noise == 0.0 {
                plan.clone()
            } else {
                plan.mapv(|v| v * (cfg.noise * normal(&mut rng)).exp())
            }
        };
        let exporter = view(&plan);
        let importer = view(&plan);
        for ((i, j), v) in exporter.indexed_iter() {
            records.push(TradeRecord {
                reporter_id: ids[i].clone(),
                partner_id: ids[j].clone(),
                year,
                element: Element::ExportQuantity,
                value: *v,
                unit: "t".into(),
            });
        }
        for ((i, j), v) in importer.indexed_iter() {
            records.push(TradeRecord {
                reporter_id: ids[j].clone(),
                partner_id: ids[i].clone(),
                year,
                element: Element::ImportQuantity,
                value: *v,
                unit: "t".into(),
            });
        }
        reports.push((exporter, importer, year));
        true_costs.push(cost);
        true_plans.push(plan);
    }

    // Order countries the way ingestion does, so the panel equals the
    // ingested records exactly.
    let index = pool_countries(&records, 1.0)?;
    let order: Vec<usize> = index
        .countries()
        .iter()
        .map(|c| ids.iter().position(|id| id == c).expect("generated id"))
        .collect();
    let permute = |a: &Array2<f64>| a.select(Axis(0), &order).select(Axis(1), &order);
    let reports = reports
        .into_iter()
        .map(|(e, i, year)| {
            DualReport::new(
                TransportPlan::dense(permute(&e))?,
                TransportPlan::dense(permute(&i))?,
                year,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let true_costs: Vec<_> = true_costs.iter().map(permute).collect();
    let true_plans: Vec<_> = true_plans.iter().map(permute).collect();

    let mut covariates = Vec::with_capacity(cfg.years * k * k);
    let pair_flags: Vec<[u8; 3]> = (0..k * k)
        .map(|_| {
            [
                rng.random_bool(0.1) as u8,
                rng.random_bool(0.2) as u8,
                rng.random_bool(0.3) as u8,
            ]
        })
        .collect();
    for t in 0..cfg.years {
        for i in 0..k {
            for j in 0..k {
                let (xi, yi) = positions[i];
                let (xj, yj) = positions[j];
                let d = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
                let [colony, comlang, rta] = pair_flags[i * k + j];
                covariates.push(CovariateRow {
                    exporter: ids[i].clone(),
                    importer: ids[j].clone(),
                    year: cfg.first_year + t as i32,
                    // Self pairs get an internal distance.
                    dist_km: if i == j { 100.0 } else { d.max(1.0) },
                    contig: (i != j && d < 1000.0) as u8,
                    colony: if i == j { 0 } else { colony },
                    comlang: if i == j { 1 } else { comlang },
                    rta: if i == j { 1 } else { rta },
                    tariff: if i == j { 0.0 } else { rng.random_range(0.0..10.0) },
                });
            }
        }
    }

    let panel = TradePanel::new(
        index,
        reports,
        Provenance {
            source_digests: BTreeMap::new(),
            threshold: 1.0,
        },
    )?;
    Ok(SyntheticPanel {
        panel,
        true_costs,
        true_plans,
        covariates,
        records,
    })
}

/// Coefficients of the gravity covariates used by [`gravity_sample`].
pub const GRAVITY_LAMBDA: [f64; 9] = [0.8, 0.7, -0.9, 0.4, 0.2, 0.3, 0.25, 0.5, -0.3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GravitySampleConfig {
    pub exporters: usize,
    pub importers: usize,
    pub years: usize,
    pub lambda: [f64; 9],
    /// Standard deviation of exporter-year and importer-year effects.
    pub fixed_effect_sd: f64,
    /// Average expected flow.
    pub mean_flow: f64,
    pub seed: u64,
}

impl Default for GravitySampleConfig {
    fn default() -> Self {
        Self {
            exporters: 20,
            importers: 20,
            years: 5,
            lambda: GRAVITY_LAMBDA,
            fixed_effect_sd: 0.0,
            mean_flow: 20.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GravitySample {
    pub observations: Vec<GravityObservation>,
    /// Expected flow of every observation.
    pub means: Vec<f64>,
}

/// Poisson flows whose log mean is linear in the gravity covariates plus
/// optional exporter-year and importer-year effects.
pub fn gravity_sample(cfg: &GravitySampleConfig) -> Result<GravitySample> {
    if cfg.exporters == 0 || cfg.importers == 0 || cfg.years == 0 || !(cfg.mean_flow > 0.0) {
        return Err(Error::InvalidInput("invalid gravity sample configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut observations = Vec::with_capacity(cfg.exporters * cfg.importers * cfg.years);
    let mut means = Vec::with_capacity(observations.capacity());
    for t in 0..cfg.years {
        let year = 2000 + t as i32;
        let output: Vec<f64> = (0..cfg.exporters).map(|_| (0.5 * normal(&mut rng)).exp()).collect();
        let expenditure: Vec<f64> = (0..cfg.importers).map(|_| (0.5 * normal(&mut rng)).exp()).collect();
        let remote: Vec<f64> = (0..cfg.importers).map(|_| (7.0 + 0.3 * normal(&mut rng)).exp()).collect();
        let kappa: Vec<f64> = (0..cfg.exporters).map(|_| cfg.fixed_effect_sd * normal(&mut rng)).collect();
        let omega: Vec<f64> = (0..cfg.importers).map(|_| cfg.fixed_effect_sd * normal(&mut rng)).collect();
        let mut year_obs = Vec::new();
        let mut eta = Vec::new();
        for i in 0..cfg.exporters {
            for j in 0..cfg.importers {
                let o = GravityObservation {
                    exporter: format!("E{i:02}"),
                    importer: format!("I{j:02}"),
                    year,
                    row: i,
                    col: j,
                    flow: 0.0,
                    output: output[i],
                    expenditure: expenditure[j],
                    dist_km: (7.0 + 0.5 * normal(&mut rng)).exp(),
                    contig: rng.random_bool(0.2) as u8,
                    colony: rng.random_bool(0.15) as u8,
                    comlang: rng.random_bool(0.3) as u8,
                    rta: rng.random_bool(0.4) as u8,
                    remoteness: remote[j],
                    tariff: rng.random_range(0.0..10.0),
                };
                let x = [
                    o.output.ln(),
                    o.expenditure.ln(),
                    o.dist_km.ln(),
                    o.contig as f64,
                    o.colony as f64,
                    o.comlang as f64,
                    o.rta as f64,
                    o.remoteness.ln(),
                    (o.tariff + 1.0).ln(),
                ];
                eta.push(x.iter().zip(&cfg.lambda).map(|(a, b)| a * b).sum::<f64>() + kappa[i] + omega[j]);
                year_obs.push(o);
            }
        }
        let shift = cfg.mean_flow.ln() - eta.iter().sum::<f64>() / eta.len() as f64;
        for (mut o, e) in year_obs.into_iter().zip(eta) {
            let mean = (e + shift).exp();
            o.flow = Poisson::new(mean)
                .map_err(|e| Error::InvalidInput(e.to_string()))?
                .sample(&mut rng);
            means.push(mean);
            observations.push(o);
        }
    }
    Ok(GravitySample { observations, means })
}
