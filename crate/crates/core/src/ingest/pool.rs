use std::collections::{BTreeMap, HashMap};

use super::records::TradeRecord;
use crate::error::{Error, Result};

pub const OTHER: &str = "Other";

/// Retained countries in a fixed order, followed by the aggregate `"Other"`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryIndex {
    countries: Vec<String>,
    threshold: f64,
    lookup: HashMap<String, usize>,
}

impl CountryIndex {
    /// `retained` must not contain `"Other"` or duplicates.
    pub fn new(retained: Vec<String>, threshold: f64) -> Result<Self> {
        let mut countries = retained;
        if countries.iter().any(|c| c == OTHER) {
            return Err(Error::InvalidInput(format!("{OTHER:?} is reserved")));
        }
        countries.push(OTHER.to_string());
        let lookup: HashMap<String, usize> = countries
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        if lookup.len() != countries.len() {
            return Err(Error::InvalidInput("duplicate country identifiers".into()));
        }
        Ok(Self {
            countries,
            threshold,
            lookup,
        })
    }

    /// Rebuilds an index from its serialized country list (`"Other"` last).
    pub fn from_countries(countries: Vec<String>, threshold: f64) -> Result<Self> {
        match countries.split_last() {
            Some((last, rest)) if last == OTHER => Self::new(rest.to_vec(), threshold),
            _ => Err(Error::InvalidInput(format!("country list must end with {OTHER:?}"))),
        }
    }

    /// All identifiers including the trailing `"Other"`.
    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn retained(&self) -> &[String] {
        &self.countries[..self.countries.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.countries.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn other_position(&self) -> usize {
        self.countries.len() - 1
    }

    /// Position of `id`, with every unknown identifier mapped to `"Other"`.
    pub fn position(&self, id: &str) -> usize {
        self.lookup
            .get(id)
            .copied()
            .unwrap_or(self.other_position())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.lookup.contains_key(id)
    }
}

/// Combined export and import volume per country (each record counts for
/// both of its endpoints).
pub fn country_volumes(records: &[TradeRecord]) -> BTreeMap<String, f64> {
    let mut volumes = BTreeMap::new();
    for r in records {
        *volumes.entry(r.exporter().to_string()).or_insert(0.0) += r.value;
        *volumes.entry(r.importer().to_string()).or_insert(0.0) += r.value;
    }
    volumes
}

/// Smallest prefix of countries, ranked by volume (ties by identifier),
/// whose cumulative share of all volume reaches `threshold`.
pub fn select_by_volume(volumes: &BTreeMap<String, f64>, threshold: f64) -> Vec<String> {
    let total: f64 = volumes.values().sum();
    let mut ranked: Vec<(&String, f64)> = volumes
        .iter()
        .filter(|(c, _)| c.as_str() != OTHER)
        .map(|(c, v)| (c, *v))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if threshold >= 1.0 {
        return ranked.into_iter().map(|(c, _)| c.clone()).collect();
    }
    let mut cumulative = 0.0;
    let mut retained = Vec::new();
    for (c, v) in ranked {
        if total > 0.0 && cumulative / total >= threshold {
            break;
        }
        cumulative += v;
        retained.push(c.clone());
    }
    retained
}

/// Index of the countries that jointly account for `threshold` of the
/// combined trade volume over the whole record set.
pub fn pool_countries(records: &[TradeRecord], threshold: f64) -> Result<CountryIndex> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::InvalidInput("pooling threshold must be positive".into()));
    }
    if records.is_empty() {
        return Err(Error::EmptyPanel);
    }
    CountryIndex::new(select_by_volume(&country_volumes(records), threshold), threshold)
}

/// Records relabelled onto `index`, unretained countries becoming `"Other"`.
pub fn relabel(records: &[TradeRecord], index: &CountryIndex) -> Vec<TradeRecord> {
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if !index.contains(&r.reporter_id) {
                r.reporter_id = OTHER.into();
            }
            if !index.contains(&r.partner_id) {
                r.partner_id = OTHER.into();
            }
            r
        })
        .collect()
}
