use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Element {
    /// Reporter is the exporter, partner the importer.
    ExportQuantity,
    /// Reporter is the importer, partner the exporter.
    ImportQuantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub reporter_id: String,
    pub partner_id: String,
    pub year: i32,
    pub element: Element,
    pub value: f64,
    pub unit: String,
}

impl TradeRecord {
    pub fn exporter(&self) -> &str {
        match self.element {
            Element::ExportQuantity => &self.reporter_id,
            Element::ImportQuantity => &self.partner_id,
        }
    }

    pub fn importer(&self) -> &str {
        match self.element {
            Element::ExportQuantity => &self.partner_id,
            Element::ImportQuantity => &self.reporter_id,
        }
    }
}

/// Column mapping and value conventions of a trade CSV.
///
/// Defaults follow the FAOSTAT detailed trade-matrix bulk export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaOptions {
    pub reporter_column: String,
    pub partner_column: String,
    pub element_column: String,
    pub year_column: String,
    pub unit_column: String,
    pub value_column: String,
    pub export_label: String,
    pub import_label: String,
    /// Unit label written on every accepted record.
    pub base_unit: String,
    /// Multipliers converting a unit label into `base_unit`.
    pub unit_conversions: BTreeMap<String, f64>,
    pub keep_self_flows: bool,
}

impl Default for SchemaOptions {
    fn default() -> Self {
        Self {
            reporter_column: "Reporter Country Code".into(),
            partner_column: "Partner Country Code".into(),
            element_column: "Element".into(),
            year_column: "Year".into(),
            unit_column: "Unit".into(),
            value_column: "Value".into(),
            export_label: "Export Quantity".into(),
            import_label: "Import Quantity".into(),
            base_unit: "t".into(),
            unit_conversions: BTreeMap::from([("t".into(), 1.0), ("tonnes".into(), 1.0)]),
            keep_self_flows: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub records: Vec<TradeRecord>,
    pub errors: Vec<RowError>,
    /// Rows whose element is neither the export nor the import label.
    pub ignored_elements: usize,
    pub self_flows_dropped: usize,
}

struct Columns {
    reporter: usize,
    partner: usize,
    element: usize,
    year: usize,
    unit: usize,
    value: usize,
}

fn locate(headers: &csv::StringRecord, schema: &SchemaOptions, path: &Path) -> Result<Columns> {
    let wanted = [
        &schema.reporter_column,
        &schema.partner_column,
        &schema.element_column,
        &schema.year_column,
        &schema.unit_column,
        &schema.value_column,
    ];
    let mut found = Vec::with_capacity(wanted.len());
    let mut missing = Vec::new();
    for name in wanted {
        match headers.iter().position(|h| h.trim() == name.as_str()) {
            Some(i) => found.push(i),
            None => missing.push(name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::SchemaMismatch {
            path: path.to_path_buf(),
            missing,
        });
    }
    Ok(Columns {
        reporter: found[0],
        partner: found[1],
        element: found[2],
        year: found[3],
        unit: found[4],
        value: found[5],
    })
}

enum RowOutcome {
    Record(TradeRecord),
    IgnoredElement,
    SelfFlow,
}

fn parse_row(row: &csv::StringRecord, cols: &Columns, schema: &SchemaOptions) -> std::result::Result<RowOutcome, String> {
    let field = |i: usize| row.get(i).map(str::trim).ok_or_else(|| format!("missing field {i}"));
    let element_label = field(cols.element)?;
    let element = if element_label == schema.export_label {
        Element::ExportQuantity
    } else if element_label == schema.import_label {
        Element::ImportQuantity
    } else {
        return Ok(RowOutcome::IgnoredElement);
    };
    let reporter = field(cols.reporter)?;
    let partner = field(cols.partner)?;
    if reporter.is_empty() || partner.is_empty() {
        return Err("empty country code".into());
    }
    let year: i32 = field(cols.year)?
        .parse()
        .map_err(|_| format!("invalid year {:?}", row.get(cols.year).unwrap_or("")))?;
    let raw_value = field(cols.value)?;
    let value: f64 = raw_value
        .parse()
        .map_err(|_| format!("invalid value {raw_value:?}"))?;
    if !value.is_finite() || value < 0.0 {
        return Err(format!("value must be finite and nonnegative, got {raw_value}"));
    }
    let unit = field(cols.unit)?;
    let (value, unit) = match schema.unit_conversions.get(unit) {
        Some(factor) => (value * factor, schema.base_unit.clone()),
        None => (value, unit.to_string()),
    };
    if reporter == partner && !schema.keep_self_flows {
        return Ok(RowOutcome::SelfFlow);
    }
    Ok(RowOutcome::Record(TradeRecord {
        reporter_id: reporter.to_string(),
        partner_id: partner.to_string(),
        year,
        element,
        value,
        unit,
    }))
}

/// Reads every row of a trade CSV. Malformed rows are reported with their
/// line numbers rather than dropped.
pub fn parse_trade_csv(path: &Path, schema: &SchemaOptions) -> Result<ParseOutcome> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trade_reader(file, schema, path)
}

pub fn parse_trade_reader<R: std::io::Read>(reader: R, schema: &SchemaOptions, path: &Path) -> Result<ParseOutcome> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let cols = locate(&headers, schema, path)?;
    let mut out = ParseOutcome::default();
    for (k, row) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(RowError {
                    line: e.position().map_or(line, |p| p.line()),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map_or(line, |p| p.line());
        match parse_row(&row, &cols, schema) {
            Ok(RowOutcome::Record(r)) => out.records.push(r),
            Ok(RowOutcome::IgnoredElement) => out.ignored_elements += 1,
            Ok(RowOutcome::SelfFlow) => out.self_flows_dropped += 1,
            Err(reason) => out.errors.push(RowError { line, reason }),
        }
    }
    Ok(out)
}

/// Writes records in the column layout of `schema`.
pub fn write_trade_csv(path: &Path, records: &[TradeRecord], schema: &SchemaOptions) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        &schema.reporter_column,
        &schema.partner_column,
        &schema.element_column,
        &schema.year_column,
        &schema.unit_column,
        &schema.value_column,
    ])
    .map_err(csv_err)?;
    for r in records {
        let element = match r.element {
            Element::ExportQuantity => &schema.export_label,
            Element::ImportQuantity => &schema.import_label,
        };
        w.write_record([
            r.reporter_id.as_str(),
            &r.partner_id,
            element,
            &r.year.to_string(),
            &r.unit,
            &r.value.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
