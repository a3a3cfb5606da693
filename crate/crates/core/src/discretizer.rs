//! Numeric-to-ordinal binning.
//!
//! A value equal to a cut point belongs to the lower bin, so cuts `(10, 35)`
//! read as `x <= 10`, `10 < x <= 35`, `x > 35`.

use std::collections::HashMap;
use std::io::{Read, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{quantile_sorted, sorted_copy, NumericTable};

const BUNDLED_THRESHOLDS: &str = include_str!("../data/default_thresholds.json");

/// Cut points and ordinal labels for one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub cuts: Vec<f64>,
    pub labels: Vec<String>,
}

impl Binning {
    pub fn new(cuts: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        let b = Self { cuts, labels };
        b.validate("<anonymous>")?;
        Ok(b)
    }

    fn validate(&self, attribute: &str) -> Result<()> {
        let invalid = |reason: String| Error::InvalidThresholds {
            attribute: attribute.to_string(),
            reason,
        };
        if self.labels.len() != self.cuts.len() + 1 {
            return Err(invalid(format!(
                "{} labels for {} cuts",
                self.labels.len(),
                self.cuts.len()
            )));
        }
        if self.cuts.iter().any(|c| !c.is_finite()) {
            return Err(invalid("non-finite cut".into()));
        }
        if self.cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("cuts must be strictly increasing".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(l) = self.labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(invalid(format!("duplicate label {l:?}")));
        }
        Ok(())
    }

    /// Ordinal index of the bin holding `value`.
    pub fn bin_index(&self, value: f64) -> Result<usize> {
        if value.is_nan() {
            return Err(Error::NanValue);
        }
        Ok(self.cuts.partition_point(|&c| c < value))
    }

    pub fn label(&self, value: f64) -> Result<&str> {
        Ok(&self.labels[self.bin_index(value)?])
    }
}

/// Label for `value`: `labels[i]` where `i` counts the cuts strictly below it.
pub fn bin_value<'a>(value: f64, cuts: &[f64], labels: &'a [String]) -> Result<&'a str> {
    if labels.len() != cuts.len() + 1 || cuts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidThresholds {
            attribute: "<inline>".into(),
            reason: "cuts must be strictly increasing with one more label than cuts".into(),
        });
    }
    if value.is_nan() {
        return Err(Error::NanValue);
    }
    Ok(&labels[cuts.partition_point(|&c| c < value)])
}

/// Per-attribute binnings, in attribute order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdConfig {
    attributes: IndexMap<String, Binning>,
}

impl ThresholdConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, attribute: impl Into<String>, binning: Binning) -> Result<()> {
        let attribute = attribute.into();
        binning.validate(&attribute)?;
        self.attributes.insert(attribute, binning);
        Ok(())
    }

    /// The demographic and COVID-19 outcome thresholds shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED_THRESHOLDS).expect("bundled thresholds are valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let cfg: Self = serde_json::from_reader(reader)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn validate(&self) -> Result<()> {
        for (name, b) in &self.attributes {
            b.validate(name)?;
        }
        Ok(())
    }

    pub fn get(&self, attribute: &str) -> Option<&Binning> {
        self.attributes.get(attribute)
    }

    pub fn attributes(&self) -> impl Iterator<Item = (&str, &Binning)> {
        self.attributes.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }
}

/// Cut points derived from sample quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoCuts {
    pub cuts: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Interpolated quantiles at `points` (same convention as the column quartiles).
/// Coinciding cuts collapse into one and produce a warning.
pub fn auto_thresholds(values: &[f64], points: &[f64]) -> Result<AutoCuts> {
    if points.is_empty() {
        return Err(Error::InvalidParameter("no quantile points".into()));
    }
    if points.iter().any(|p| !(*p > 0.0 && *p < 1.0)) || points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "quantile points must be strictly increasing within (0, 1)".into(),
        ));
    }
    let present: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if present.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 values, got {}",
            present.len()
        )));
    }
    let sorted = sorted_copy(&present);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let bins = points.len() + 1;
    if distinct.len() < bins {
        return Err(Error::TooFewDistinct {
            distinct: distinct.len(),
            bins,
        });
    }
    let mut cuts: Vec<f64> = Vec::with_capacity(points.len());
    let mut warnings = Vec::new();
    for &p in points {
        let q = quantile_sorted(&sorted, p);
        match cuts.last() {
            Some(&last) if q <= last => {
                warnings.push(format!("quantile {p} coincides with cut {last}; collapsed"))
            }
            _ => cuts.push(q),
        }
    }
    Ok(AutoCuts { cuts, warnings })
}

/// Ordinal labels per row for each configured attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalTable {
    row_ids: Vec<String>,
    attributes: Vec<String>,
    categories: Vec<Vec<String>>,
    /// Row-major label indices into `categories[attribute]`.
    cells: Vec<Vec<Option<usize>>>,
    thresholds: Option<ThresholdConfig>,
}

impl CategoricalTable {
    /// Builds a table from label text. `categories` fixes the ordinal label list of each attribute.
    pub fn from_labels(
        row_ids: Vec<String>,
        attributes: Vec<(String, Vec<String>)>,
        rows: Vec<Vec<Option<String>>>,
    ) -> Result<Self> {
        let (names, categories): (Vec<String>, Vec<Vec<String>>) = attributes.into_iter().unzip();
        if rows.len() != row_ids.len() {
            return Err(Error::Shape(format!(
                "{} label rows for {} row ids",
                rows.len(),
                row_ids.len()
            )));
        }
        let lookup: Vec<HashMap<&str, usize>> = categories
            .iter()
            .map(|ls| ls.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect())
            .collect();
        let mut cells = Vec::with_capacity(rows.len());
        for row in &rows {
            if row.len() != names.len() {
                return Err(Error::Shape(format!(
                    "label row has {} cells, expected {}",
                    row.len(),
                    names.len()
                )));
            }
            let mut out = Vec::with_capacity(row.len());
            for (a, cell) in row.iter().enumerate() {
                out.push(match cell {
                    None => None,
                    Some(l) => Some(*lookup[a].get(l.as_str()).ok_or_else(|| {
                        Error::UnknownLabel {
                            attribute: names[a].clone(),
                            label: l.clone(),
                        }
                    })?),
                });
            }
            cells.push(out);
        }
        Ok(Self {
            row_ids,
            attributes: names,
            categories,
            cells,
            thresholds: None,
        })
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn thresholds(&self) -> Option<&ThresholdConfig> {
        self.thresholds.as_ref()
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }

    pub(crate) fn require_attribute(&self, name: &str) -> Result<usize> {
        self.attribute_index(name)
            .ok_or_else(|| Error::UnknownAttributes(vec![name.to_string()]))
    }

    /// Ordinal label list of an attribute.
    pub fn categories(&self, attribute: usize) -> &[String] {
        &self.categories[attribute]
    }

    pub fn code(&self, row: usize, attribute: usize) -> Option<usize> {
        self.cells[row][attribute]
    }

    pub fn label(&self, row: usize, attribute: usize) -> Option<&str> {
        self.cells[row][attribute].map(|i| self.categories[attribute][i].as_str())
    }

    pub fn labels_of(&self, name: &str) -> Result<Vec<Option<&str>>> {
        let a = self.require_attribute(name)?;
        Ok((0..self.n_rows()).map(|r| self.label(r, a)).collect())
    }

    pub fn write_csv<W: Write>(&self, writer: W, id_header: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![id_header.to_string()];
        header.extend(self.attributes.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec = vec![self.row_ids[r].clone()];
            rec.extend((0..self.attributes.len()).map(|a| self.label(r, a).unwrap_or("").to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a label CSV. Attributes covered by `thresholds` take their label
    /// order from it; others use the sorted distinct labels found.
    pub fn read_csv<R: Read>(reader: R, thresholds: Option<&ThresholdConfig>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header.is_empty() {
            return Err(Error::Shape("CSV has no header".into()));
        }
        let names = header[1..].to_vec();
        let mut row_ids = Vec::new();
        let mut rows = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let id = rec.get(0).unwrap_or("").trim().to_string();
            if id.is_empty() {
                return Err(Error::EmptyRowId(i + 1));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateRowId(id));
            }
            rows.push(
                (1..header.len())
                    .map(|c| {
                        let t = rec.get(c).unwrap_or("").trim();
                        (!t.is_empty()).then(|| t.to_string())
                    })
                    .collect::<Vec<_>>(),
            );
            row_ids.push(id);
        }
        let attributes = names
            .iter()
            .enumerate()
            .map(|(a, name)| {
                let cats = match thresholds.and_then(|t| t.get(name)) {
                    Some(b) => b.labels.clone(),
                    None => {
                        let mut ls: Vec<String> = rows.iter().filter_map(|r| r[a].clone()).collect();
                        ls.sort();
                        ls.dedup();
                        ls
                    }
                };
                (name.clone(), cats)
            })
            .collect();
        let mut table = Self::from_labels(row_ids, attributes, rows)?;
        table.thresholds = thresholds.cloned();
        Ok(table)
    }
}

pub fn discretize_table(table: &NumericTable, config: &ThresholdConfig) -> Result<CategoricalTable> {
    let unknown: Vec<String> = config
        .attributes()
        .filter(|(a, _)| table.column_index(a).is_none())
        .map(|(a, _)| a.to_string())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownAttributes(unknown));
    }
    let plan: Vec<(usize, &Binning)> = config
        .attributes()
        .map(|(a, b)| (table.column_index(a).expect("checked"), b))
        .collect();
    let mut cells = Vec::with_capacity(table.n_rows());
    for r in 0..table.n_rows() {
        let row = table.row(r);
        let mut out = Vec::with_capacity(plan.len());
        for (c, b) in &plan {
            out.push(match row[*c] {
                Some(v) => Some(b.bin_index(v)?),
                None => None,
            });
        }
        cells.push(out);
    }
    Ok(CategoricalTable {
        row_ids: table.row_ids().to_vec(),
        attributes: config.attributes().map(|(a, _)| a.to_string()).collect(),
        categories: config.attributes().map(|(_, b)| b.labels.clone()).collect(),
        cells,
        thresholds: Some(config.clone()),
    })
}

/// Present-label counts in ordinal order; labels with no occurrences are omitted.
pub fn category_histogram(table: &CategoricalTable, attribute: &str) -> Result<IndexMap<String, usize>> {
    let a = table.require_attribute(attribute)?;
    let mut counts = vec![0usize; table.categories[a].len()];
    for row in &table.cells {
        if let Some(i) = row[a] {
            counts[i] += 1;
        }
    }
    Ok(table.categories[a]
        .iter()
        .zip(counts)
        .filter(|(_, n)| *n > 0)
        .map(|(l, n)| (l.clone(), n))
        .collect())
}
