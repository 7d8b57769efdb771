use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use tradecost::evaluation::{compare_models, write_report_csv, write_report_json, write_scatter_csv, ModelOutput};
use tradecost::gravity::{
    build_design, gravity_observations, gravity_predict, ppml_fit, predicted_plans, read_covariates,
    write_coefficient_table, write_covariates,
};
use tradecost::ingest::{
    build_panel, file_digest, marginals_from_plan, parse_trade_csv, plan_from_csv, plan_to_csv, pool_countries,
    read_panel_dir, write_panel_dir, write_trade_csv, Element, ReporterView, RowError, TradePanel,
};
use tradecost::inverse::{forward, infer_costs, train_model, Checkpoint};
use tradecost::ot::{sinkhorn, TransportPlan};
use tradecost::synthetic::generate;
use tradecost::uncertainty::{
    build_ensemble, summarize, write_summary_csv, EnsembleOptions, EnsembleSidecar, DEFAULT_QUANTILES,
};
use tradecost::Error;

use crate::config::required;
use crate::{CliError, Command, RunConfig};

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(command: &Command, cfg: &RunConfig, out: &Path) -> Result<()> {
    match command {
        Command::Ingest { .. } => ingest(cfg, out),
        Command::Generate => generate_panel(cfg, out),
        Command::Train { .. } => train(cfg, out),
        Command::Infer { .. } => infer(cfg, out),
        Command::Ensemble { .. } => ensemble(cfg, out),
        Command::Gravity { .. } => gravity(cfg, out),
        Command::Compare { .. } => compare(cfg, out),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_text(path, &(json + "\n"))
}

fn create_dir(path: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn load_panel(cfg: &RunConfig) -> Result<TradePanel> {
    Ok(read_panel_dir(required(&cfg.paths.panel, "panel")?)?)
}

fn dense_plan(values: Array2<f64>) -> TransportPlan {
    TransportPlan::dense(values).expect("finite nonnegative values")
}

/// Plans named `plan_<year>.csv`, one per panel year.
fn read_plans(dir: &Path, panel: &TradePanel) -> Result<Vec<TransportPlan>> {
    let countries = panel.country_index.countries();
    panel
        .years
        .iter()
        .map(|y| {
            let path = dir.join(format!("plan_{y}.csv"));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok(plan_from_csv(&text, countries, &path)?)
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct FileReport {
    file: String,
    digest: String,
    records: usize,
    errors: usize,
    first_errors: Vec<RowError>,
    ignored_elements: usize,
    self_flows_dropped: usize,
}

#[derive(Debug, Serialize)]
struct IngestReport {
    files: Vec<FileReport>,
    countries: Vec<String>,
    retained: Vec<String>,
    years: Vec<i32>,
    record_total_exports: f64,
    record_total_imports: f64,
    panel_total_exports: f64,
    panel_total_imports: f64,
}

fn ingest(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.paths.trade.is_empty() {
        return Err(CliError::Config("no trade files given (--trade)".into()));
    }
    let mut records = Vec::new();
    let mut files = Vec::new();
    let mut digests = BTreeMap::new();
    for path in &cfg.paths.trade {
        let outcome = parse_trade_csv(path, &cfg.ingest.schema)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let digest = file_digest(path)?;
        log::info!(
            "{name}: {} records, {} row errors",
            outcome.records.len(),
            outcome.errors.len()
        );
        digests.insert(name.clone(), digest.clone());
        files.push(FileReport {
            file: name,
            digest,
            records: outcome.records.len(),
            errors: outcome.errors.len(),
            first_errors: outcome.errors.iter().take(20).cloned().collect(),
            ignored_elements: outcome.ignored_elements,
            self_flows_dropped: outcome.self_flows_dropped,
        });
        records.extend(outcome.records);
    }
    let index = pool_countries(&records, cfg.ingest.threshold)?;
    let mut panel = build_panel(&records, &index)?;
    panel.provenance.source_digests = digests;
    write_panel_dir(&panel, &out.join("panel"))?;

    let record_total = |e: Element| records.iter().filter(|r| r.element == e).map(|r| r.value).sum::<f64>();
    let panel_total = |v: ReporterView| panel.reports.iter().map(|r| r.view(v).total()).sum::<f64>();
    let report = IngestReport {
        files,
        countries: index.countries().to_vec(),
        retained: index.retained().to_vec(),
        years: panel.years.clone(),
        record_total_exports: record_total(Element::ExportQuantity),
        record_total_imports: record_total(Element::ImportQuantity),
        panel_total_exports: panel_total(ReporterView::Exporter),
        panel_total_imports: panel_total(ReporterView::Importer),
    };
    write_json(&out.join("ingest_report.json"), &report)
}

fn generate_panel(cfg: &RunConfig, out: &Path) -> Result<()> {
    let synthetic = generate(&cfg.generate)?;
    let panel = &synthetic.panel;
    write_panel_dir(panel, &out.join("panel"))?;
    let countries = panel.country_index.countries();
    let truth = create_dir(&out.join("truth"))?;
    for (t, year) in panel.years.iter().enumerate() {
        let cost = dense_plan(synthetic.true_costs[t].clone());
        write_text(&truth.join(format!("cost_{year}.csv")), &plan_to_csv(&cost, countries))?;
        let plan = dense_plan(synthetic.true_plans[t].clone());
        write_text(&truth.join(format!("plan_{year}.csv")), &plan_to_csv(&plan, countries))?;
    }
    write_covariates(&out.join("covariates.csv"), &synthetic.covariates)?;
    write_trade_csv(&out.join("trade.csv"), &synthetic.records, &cfg.ingest.schema)?;
    Ok(())
}

fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let panel = load_panel(cfg)?;
    let (m, n) = panel.dims();
    let network = cfg.network_for(m, n);
    let (model, history) = train_model(&panel, network, &cfg.training)?;
    if let Some(last) = history.last() {
        log::info!("trained {} epochs, final loss {:.6e}", history.epochs.len(), last.total);
    }
    history.write_csv(&out.join("history.csv"))?;
    Checkpoint {
        network,
        training: cfg.training.clone(),
        model,
    }
    .save(&out.join("model.json"))?;
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<Checkpoint> {
    Ok(Checkpoint::load(required(&cfg.paths.model, "model")?)?)
}

fn infer(cfg: &RunConfig, out: &Path) -> Result<()> {
    let panel = load_panel(cfg)?;
    let checkpoint = load_model(cfg)?;
    let countries = panel.country_index.countries();
    let costs_dir = create_dir(&out.join("costs"))?;
    let plans_dir = create_dir(&out.join("plans"))?;
    for inferred in infer_costs(&checkpoint.model, &panel, &ReporterView::BOTH, cfg.epsilon)? {
        let name = format!("{}_{}.csv", inferred.view.label(), inferred.year);
        let cost = dense_plan(inferred.cost.values().clone());
        write_text(&costs_dir.join(name), &plan_to_csv(&cost, countries))?;
    }
    for report in &panel.reports {
        let averaged = report.averaged_plan();
        let params = checkpoint.model.params_for(report.year)?;
        let cost = forward(params, &averaged, cfg.epsilon)?;
        let as_plan = dense_plan(cost.values().clone());
        write_text(
            &costs_dir.join(format!("average_{}.csv", report.year)),
            &plan_to_csv(&as_plan, countries),
        )?;
        let solved = sinkhorn(&cost, &marginals_from_plan(&averaged)?, &cfg.solver)?;
        write_text(
            &plans_dir.join(format!("plan_{}.csv", report.year)),
            &plan_to_csv(&solved.plan, countries),
        )?;
    }
    Ok(())
}

fn ensemble(cfg: &RunConfig, out: &Path) -> Result<()> {
    let panel = load_panel(cfg)?;
    let checkpoint = load_model(cfg)?;
    let countries = panel.country_index.countries();
    let opts = EnsembleOptions {
        n: cfg.ensemble.n,
        seed: cfg.seed,
        epsilon: cfg.epsilon,
        solver: cfg.solver.clone(),
        fixed_marginals: cfg.ensemble.fixed_marginals,
    };
    let mean_dir = create_dir(&out.join("ensemble_mean"))?;
    let mut summaries = Vec::new();
    let mut failures_by_year = Vec::new();
    for report in &panel.reports {
        let params = checkpoint.model.params_for(report.year)?;
        let members = build_ensemble(params, report, &opts)?;
        failures_by_year.push((report.year, members.failed.len()));
        if members.is_empty() {
            return Err(Error::InsufficientSamples {
                required: 1,
                found: 0,
            }
            .into());
        }
        let mut mean = Array2::<f64>::zeros(report.dims());
        for c in &members.samples {
            mean += c.values();
        }
        mean /= members.len() as f64;
        write_text(
            &mean_dir.join(format!("cost_{}.csv", report.year)),
            &plan_to_csv(&dense_plan(mean), countries),
        )?;
        if members.len() >= 2 {
            summaries.push(summarize(&members, &DEFAULT_QUANTILES)?);
        }
    }
    if summaries.len() == panel.len() {
        write_summary_csv(&out.join("ensemble.csv"), &summaries, countries)?;
    } else {
        log::warn!("fewer than 2 ensemble members; spread statistics not written");
    }
    let sidecar = EnsembleSidecar {
        seed: opts.seed,
        n: opts.n,
        epsilon: opts.epsilon,
        fixed_marginals: opts.fixed_marginals,
        failures: failures_by_year.iter().map(|(_, f)| f).sum(),
        failures_by_year,
    };
    write_json(&out.join("ensemble.json"), &sidecar)
}

fn gravity(cfg: &RunConfig, out: &Path) -> Result<()> {
    let panel = load_panel(cfg)?;
    let covariates = read_covariates(required(&cfg.paths.covariates, "covariates")?)?;
    let set = gravity_observations(&panel, &covariates, &cfg.gravity.observations)?;
    if set.zero_mass_skipped > 0 {
        log::warn!("{} flows skipped for zero output or expenditure", set.zero_mass_skipped);
    }
    let design = build_design(&set.observations, &cfg.gravity.design)?;
    let fit = ppml_fit(&design, &cfg.gravity.ppml)?;
    log::info!("PPML converged in {} iterations", fit.iterations);
    write_json(&out.join("gravity_fit.json"), &fit)?;
    write_coefficient_table(&out.join("coefficients.csv"), &[(cfg.commodity.clone(), &fit)])?;
    let predictions = gravity_predict(&fit, &design)?;
    let plans = predicted_plans(&design, &predictions, &panel)?;
    let dir = create_dir(&out.join("gravity_plans"))?;
    let countries = panel.country_index.countries();
    for (year, plan) in panel.years.iter().zip(&plans) {
        write_text(&dir.join(format!("plan_{year}.csv")), &plan_to_csv(plan, countries))?;
    }
    Ok(())
}

fn compare(cfg: &RunConfig, out: &Path) -> Result<()> {
    let panel = load_panel(cfg)?;
    let ot = read_plans(required(&cfg.paths.ot_plans, "OT plans")?, &panel)?;
    let gravity = match &cfg.paths.gravity_plans {
        Some(_) => Some(read_plans(required(&cfg.paths.gravity_plans, "gravity plans")?, &panel)?),
        None => None,
    };
    let mut models = vec![ModelOutput {
        name: "ot",
        plans: &ot,
    }];
    if let Some(g) = &gravity {
        models.push(ModelOutput {
            name: "gravity",
            plans: g,
        });
    }
    let opts = &cfg.compare.options;
    let report = compare_models(&cfg.commodity, &panel, &models, opts)?;
    write_report_csv(&out.join("comparison.csv"), std::slice::from_ref(&report))?;
    write_report_json(&out.join("comparison.json"), std::slice::from_ref(&report))?;
    write_scatter_csv(&out.join("scatter.csv"), &cfg.commodity, &panel, &models, opts)?;
    for m in &report.models {
        log::info!("{}: mean RMSE {:.6e}, pooled {:.6e}", m.model, m.rmse.mean, m.rmse_pooled);
    }
    if let Some(bound) = cfg.compare.ot_rmse_bound {
        let got = report.models[0].rmse.mean;
        if got > bound {
            return Err(CliError::Check(format!("mean OT RMSE {got} exceeds the bound {bound}")));
        }
    }
    Ok(())
}
