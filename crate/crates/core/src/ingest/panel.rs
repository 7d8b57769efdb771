use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::pool::CountryIndex;
use super::records::{Element, TradeRecord};
use crate::error::{Error, Result};
use crate::ot::{Marginals, TransportPlan};

/// The exporter-reported (`T^E`) and importer-reported (`T^I`) views of one
/// year's flows.
#[derive(Debug, Clone, PartialEq)]
pub struct DualReport {
    pub exporter_plan: TransportPlan,
    pub importer_plan: TransportPlan,
    pub year: i32,
}

impl DualReport {
    pub fn new(exporter_plan: TransportPlan, importer_plan: TransportPlan, year: i32) -> Result<Self> {
        if exporter_plan.dims() != importer_plan.dims() {
            return Err(Error::shape(
                format!("{:?}", exporter_plan.dims()),
                format!("{:?}", importer_plan.dims()),
            ));
        }
        Ok(Self {
            exporter_plan,
            importer_plan,
            year,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.exporter_plan.dims()
    }

    /// Mean of the reports observing entry `(r, c)`.
    pub fn averaged(&self, r: usize, c: usize) -> Option<f64> {
        match (self.exporter_plan.get(r, c), self.importer_plan.get(r, c)) {
            (Some(x), Some(y)) => Some(0.5 * (x + y)),
            (Some(x), None) | (None, Some(x)) => Some(x),
            (None, None) => None,
        }
    }

    /// Reporter-averaged plan, observed wherever either report is.
    pub fn averaged_plan(&self) -> TransportPlan {
        let dims = self.dims();
        let mut values = Array2::zeros(dims);
        let mut mask = Array2::from_elem(dims, false);
        for ((r, c), v) in values.indexed_iter_mut() {
            if let Some(x) = self.averaged(r, c) {
                *v = x;
                mask[[r, c]] = true;
            }
        }
        TransportPlan::masked(values, mask).expect("averages of valid plans")
    }

    pub fn view(&self, view: ReporterView) -> &TransportPlan {
        match view {
            ReporterView::Exporter => &self.exporter_plan,
            ReporterView::Importer => &self.importer_plan,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReporterView {
    Exporter,
    Importer,
}

impl ReporterView {
    pub const BOTH: [ReporterView; 2] = [ReporterView::Exporter, ReporterView::Importer];

    pub fn label(self) -> &'static str {
        match self {
            ReporterView::Exporter => "exporter",
            ReporterView::Importer => "importer",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Source file name to sha256 hex digest.
    pub source_digests: BTreeMap<String, String>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradePanel {
    pub country_index: CountryIndex,
    pub years: Vec<i32>,
    pub reports: Vec<DualReport>,
    pub provenance: Provenance,
}

impl TradePanel {
    pub fn new(
        country_index: CountryIndex,
        reports: Vec<DualReport>,
        provenance: Provenance,
    ) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::EmptyPanel);
        }
        let k = country_index.len();
        if let Some(bad) = reports.iter().find(|r| r.dims() != (k, k)) {
            return Err(Error::shape(format!("({k}, {k})"), format!("{:?}", bad.dims())));
        }
        let years: Vec<i32> = reports.iter().map(|r| r.year).collect();
        if years.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("panel years must be strictly increasing".into()));
        }
        Ok(Self {
            country_index,
            years,
            reports,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        let k = self.country_index.len();
        (k, k)
    }

    pub fn report(&self, year: i32) -> Option<&DualReport> {
        self.reports.iter().find(|r| r.year == year)
    }
}

/// Aggregates records onto `index`: per year, export records fill `T^E` and
/// import records fill `T^I`; duplicates are summed and entries without any
/// report stay masked.
pub fn build_panel(records: &[TradeRecord], index: &CountryIndex) -> Result<TradePanel> {
    if records.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let units: BTreeSet<&str> = records.iter().map(|r| r.unit.as_str()).collect();
    if units.len() > 1 {
        return Err(Error::InconsistentUnits(
            units.into_iter().collect::<Vec<_>>().join(", "),
        ));
    }
    let k = index.len();
    let years: BTreeSet<i32> = records.iter().map(|r| r.year).collect();
    let slot: BTreeMap<i32, usize> = years.iter().enumerate().map(|(s, y)| (*y, s)).collect();
    let empty = || (Array2::<f64>::zeros((k, k)), Array2::from_elem((k, k), false));
    let mut exporter: Vec<_> = years.iter().map(|_| empty()).collect();
    let mut importer: Vec<_> = years.iter().map(|_| empty()).collect();
    for r in records {
        let (i, j) = (index.position(r.exporter()), index.position(r.importer()));
        let s = slot[&r.year];
        let (values, mask) = match r.element {
            Element::ExportQuantity => &mut exporter[s],
            Element::ImportQuantity => &mut importer[s],
        };
        values[[i, j]] += r.value;
        mask[[i, j]] = true;
    }
    let reports = years
        .iter()
        .zip(exporter.into_iter().zip(importer))
        .map(|(year, ((ev, em), (iv, im)))| {
            DualReport::new(TransportPlan::masked(ev, em)?, TransportPlan::masked(iv, im)?, *year)
        })
        .collect::<Result<Vec<_>>>()?;
    TradePanel::new(
        index.clone(),
        reports,
        Provenance {
            source_digests: BTreeMap::new(),
            threshold: index.threshold(),
        },
    )
}

/// Rows and columns of `plan` with no observed entry.
pub fn unobserved_lines(plan: &TransportPlan) -> (Vec<usize>, Vec<usize>) {
    let mask = plan.mask();
    let rows = mask
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| !r.iter().any(|&m| m))
        .map(|(i, _)| i)
        .collect();
    let cols = mask
        .columns()
        .into_iter()
        .enumerate()
        .filter(|(_, c)| !c.iter().any(|&m| m))
        .map(|(j, _)| j)
        .collect();
    (rows, cols)
}

/// Supply and demand from row and column sums, masked entries counting as
/// zero. Fully unobserved rows or columns get zero mass (dropped from the
/// transport problem) with a warning.
pub fn marginals_from_plan(plan: &TransportPlan) -> Result<Marginals> {
    let (rows, cols) = unobserved_lines(plan);
    let (m, n) = plan.dims();
    if rows.len() == m || cols.len() == n || plan.total() <= 0.0 {
        return Err(Error::DegenerateRow { rows, cols });
    }
    if !rows.is_empty() || !cols.is_empty() {
        log::warn!("dropping unobserved rows {rows:?} and columns {cols:?}");
    }
    Marginals::new(plan.row_sums(), plan.col_sums())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::pool::{pool_countries, OTHER};
    use ndarray::array;

    fn rec(rep: &str, par: &str, year: i32, element: Element, value: f64) -> TradeRecord {
        TradeRecord {
            reporter_id: rep.into(),
            partner_id: par.into(),
            year,
            element,
            value,
            unit: "t".into(),
        }
    }

    #[test]
    fn marginals_examples() {
        let p = TransportPlan::dense(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let m = marginals_from_plan(&p).unwrap();
        assert_eq!((m.supply(), m.demand()), (&[3.0, 7.0][..], &[4.0, 6.0][..]));
        let masked = TransportPlan::masked(
            array![[1.0, 99.0], [3.0, 4.0]],
            array![[true, false], [true, true]],
        )
        .unwrap();
        let m = marginals_from_plan(&masked).unwrap();
        assert_eq!((m.supply(), m.demand()), (&[1.0, 7.0][..], &[4.0, 4.0][..]));
        let none = TransportPlan::masked(Array2::ones((2, 2)), Array2::from_elem((2, 2), false)).unwrap();
        assert!(matches!(marginals_from_plan(&none), Err(Error::DegenerateRow { .. })));
    }

    #[test]
    fn importer_only_flow_is_masked_for_exporter() {
        let records = vec![
            rec("A", "B", 2000, Element::ImportQuantity, 5.0),
            rec("A", "B", 2000, Element::ExportQuantity, 3.0),
            rec("A", "B", 2000, Element::ExportQuantity, 4.0),
        ];
        let idx = pool_countries(&records, 1.0).unwrap();
        let panel = build_panel(&records, &idx).unwrap();
        let r = &panel.reports[0];
        let (a, b) = (idx.position("A"), idx.position("B"));
        // B reported importing 5 from A.
        assert_eq!(r.importer_plan.get(b, a), Some(5.0));
        assert_eq!(r.exporter_plan.get(b, a), None);
        assert_eq!(r.exporter_plan.get(a, b), Some(7.0));
    }

    #[test]
    fn pooled_entries_sum_minor_exporters() {
        let mut records = vec![
            rec("FR", "DE", 2001, Element::ExportQuantity, 500.0),
            rec("DE", "FR", 2001, Element::ExportQuantity, 400.0),
        ];
        for (c, v) in [("X1", 1.0), ("X2", 2.5), ("X3", 0.25)] {
            records.push(rec(c, "FR", 2001, Element::ExportQuantity, v));
        }
        let idx = pool_countries(&records, 0.99).unwrap();
        assert_eq!(idx.retained(), ["FR", "DE"]);
        let panel = build_panel(&records, &idx).unwrap();
        let e = &panel.reports[0].exporter_plan;
        assert_eq!(e.get(idx.position(OTHER), idx.position("FR")), Some(3.75));
        assert_eq!(e.total(), 903.75);
    }

    #[test]
    fn mixed_units_are_rejected() {
        let mut records = vec![rec("A", "B", 2000, Element::ExportQuantity, 1.0)];
        records.push(TradeRecord {
            unit: "kg".into(),
            ..records[0].clone()
        });
        let idx = pool_countries(&records, 1.0).unwrap();
        assert!(matches!(build_panel(&records, &idx), Err(Error::InconsistentUnits(_))));
    }

    #[test]
    fn years_are_sorted() {
        let records = vec![
            rec("A", "B", 2003, Element::ExportQuantity, 1.0),
            rec("A", "B", 2001, Element::ImportQuantity, 1.0),
        ];
        let idx = pool_countries(&records, 1.0).unwrap();
        let panel = build_panel(&records, &idx).unwrap();
        assert_eq!(panel.years, vec![2001, 2003]);
    }
}
