use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::panel::{DualReport, Provenance, ReporterView, TradePanel};
use super::pool::CountryIndex;
use crate::error::{Error, Result};
use crate::ot::TransportPlan;

pub const MASK_SENTINEL: &str = "NA";
pub const INDEX_FILE: &str = "index.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelIndex {
    pub countries: Vec<String>,
    pub years: Vec<i32>,
    pub threshold: f64,
    pub source_digests: BTreeMap<String, String>,
    /// Digest of every matrix file written next to the index.
    pub matrix_digests: BTreeMap<String, String>,
}

pub fn matrix_file_name(view: ReporterView, year: i32) -> String {
    format!("{}_{year}.csv", view.label())
}

/// CSV text of one plan: header `exporter,<importers...>`, one row per
/// exporter, masked entries written as `NA`.
pub fn plan_to_csv(plan: &TransportPlan, countries: &[String]) -> String {
    let mut out = String::from("exporter");
    for c in countries {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (i, name) in countries.iter().enumerate() {
        out.push_str(name);
        for j in 0..countries.len() {
            out.push(',');
            match plan.get(i, j) {
                Some(v) => out.push_str(&v.to_string()),
                None => out.push_str(MASK_SENTINEL),
            }
        }
        out.push('\n');
    }
    out
}

pub fn plan_from_csv(text: &str, countries: &[String], path: &Path) -> Result<TransportPlan> {
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let k = countries.len();
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    if header.iter().skip(1).ne(countries.iter().map(String::as_str)) {
        return Err(malformed("column countries differ from the index".into()));
    }
    let mut values = Array2::zeros((k, k));
    let mut mask = Array2::from_elem((k, k), false);
    let mut rows = 0;
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        if i >= k || row.get(0) != Some(countries[i].as_str()) || row.len() != k + 1 {
            return Err(malformed(format!("unexpected row {}", i + 2)));
        }
        for (j, cell) in row.iter().skip(1).enumerate() {
            if cell != MASK_SENTINEL {
                values[[i, j]] = cell
                    .parse()
                    .map_err(|_| malformed(format!("bad number {cell:?} at row {}", i + 2)))?;
                mask[[i, j]] = true;
            }
        }
        rows += 1;
    }
    if rows != k {
        return Err(malformed(format!("expected {k} rows, found {rows}")));
    }
    TransportPlan::masked(values, mask)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_panel_dir(panel: &TradePanel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let countries = panel.country_index.countries();
    let mut matrix_digests = BTreeMap::new();
    for report in &panel.reports {
        for view in ReporterView::BOTH {
            let name = matrix_file_name(view, report.year);
            let text = plan_to_csv(report.view(view), countries);
            matrix_digests.insert(name.clone(), sha256_hex(text.as_bytes()));
            write(&dir.join(&name), text.as_bytes())?;
        }
    }
    let index = PanelIndex {
        countries: countries.to_vec(),
        years: panel.years.clone(),
        threshold: panel.provenance.threshold,
        source_digests: panel.provenance.source_digests.clone(),
        matrix_digests,
    };
    let path = dir.join(INDEX_FILE);
    let json = serde_json::to_string_pretty(&index).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    write(&path, json.as_bytes())
}

pub fn read_panel_dir(dir: &Path) -> Result<TradePanel> {
    let path: PathBuf = dir.join(INDEX_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: PanelIndex = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    let country_index = CountryIndex::from_countries(index.countries.clone(), index.threshold)?;
    let mut reports = Vec::with_capacity(index.years.len());
    for &year in &index.years {
        let mut plans = Vec::with_capacity(2);
        for view in ReporterView::BOTH {
            let name = matrix_file_name(view, year);
            let file = dir.join(&name);
            let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
            if let Some(expected) = index.matrix_digests.get(&name) {
                if *expected != sha256_hex(text.as_bytes()) {
                    return Err(Error::Malformed {
                        path: file,
                        reason: "digest does not match index".into(),
                    });
                }
            }
            plans.push(plan_from_csv(&text, &index.countries, &file)?);
        }
        let importer = plans.pop().expect("two views");
        let exporter = plans.pop().expect("two views");
        reports.push(DualReport::new(exporter, importer, year)?);
    }
    TradePanel::new(
        country_index,
        reports,
        Provenance {
            source_digests: index.source_digests,
            threshold: index.threshold,
        },
    )
}
