use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a bilateral covariate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub exporter: String,
    pub importer: String,
    pub year: i32,
    pub dist_km: f64,
    pub contig: u8,
    pub colony: u8,
    pub comlang: u8,
    pub rta: u8,
    pub tariff: f64,
}

impl CovariateRow {
    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.dist_km > 0.0 && self.dist_km.is_finite()) {
            return Err(format!("dist_km must be positive, got {}", self.dist_km));
        }
        if !(self.tariff >= 0.0 && self.tariff.is_finite()) {
            return Err(format!("tariff must be nonnegative, got {}", self.tariff));
        }
        if [self.contig, self.colony, self.comlang, self.rta].iter().any(|b| *b > 1) {
            return Err("binary covariates must be 0 or 1".into());
        }
        Ok(())
    }
}

pub const COVARIATE_COLUMNS: [&str; 9] = [
    "exporter", "importer", "year", "dist_km", "contig", "colony", "comlang", "rta", "tariff",
];

pub fn read_covariates(path: &Path) -> Result<Vec<CovariateRow>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let missing: Vec<String> = COVARIATE_COLUMNS
        .iter()
        .filter(|c| !headers.iter().any(|h| h.trim() == **c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::SchemaMismatch {
            path: path.to_path_buf(),
            missing,
        });
    }
    let mut rows = Vec::new();
    for (k, row) in rdr.deserialize::<CovariateRow>().enumerate() {
        let row = row.map_err(csv_err)?;
        row.validate().map_err(|reason| Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("line {}: {reason}", k + 2),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_covariates(path: &Path, rows: &[CovariateRow]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cov.csv");
        let rows = vec![CovariateRow {
            exporter: "A".into(),
            importer: "B".into(),
            year: 2001,
            dist_km: 1234.5,
            contig: 1,
            colony: 0,
            comlang: 1,
            rta: 0,
            tariff: 0.0,
        }];
        write_covariates(&path, &rows).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with(&COVARIATE_COLUMNS.join(",")));
        assert_eq!(read_covariates(&path).unwrap(), rows);
    }

    #[test]
    fn missing_column_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cov.csv");
        std::fs::write(&path, "exporter,importer,year\nA,B,1\n").unwrap();
        assert!(matches!(read_covariates(&path), Err(Error::SchemaMismatch { .. })));
    }
}
