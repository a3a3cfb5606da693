//! Typed numeric tables: CSV ingest, row blocklists, boxplot statistics,
//! IQR outlier handling and z-score normalization.
//!
//! Missing cells are kept per cell. Nothing in this module drops a row unless
//! asked to (blocklist match or `drop_row` outlier policy), and no operation
//! rewrites a surviving value other than normalization.

use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attributes reserved for the COVID-19 outcome role.
pub const OUTCOME_ATTRIBUTES: [&str; 3] = ["DpM", "CpM", "TpM"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributeRole {
    Demographic,
    CovidOutcome,
    Identifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMeta {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    pub role: AttributeRole,
}

impl AttributeMeta {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, role: AttributeRole) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            role,
        }
    }

    /// Role from the attribute name alone: DpM/CpM/TpM are outcomes, the rest demographic.
    pub fn inferred(name: &str) -> Self {
        let role = if OUTCOME_ATTRIBUTES.contains(&name) {
            AttributeRole::CovidOutcome
        } else {
            AttributeRole::Demographic
        };
        let unit = if role == AttributeRole::CovidOutcome {
            "per million population"
        } else {
            ""
        };
        Self::new(name, unit, role)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub loaded_at_unix: u64,
}

impl Provenance {
    pub fn now(source: impl Into<String>) -> Self {
        let loaded_at_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            source: source.into(),
            loaded_at_unix,
        }
    }
}

/// Country-keyed rows by attribute-keyed columns of optional reals.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    row_ids: Vec<String>,
    columns: Vec<AttributeMeta>,
    cells: Vec<Vec<Option<f64>>>,
    provenance: Provenance,
}

impl NumericTable {
    pub fn new(
        row_ids: Vec<String>,
        columns: Vec<AttributeMeta>,
        cells: Vec<Vec<Option<f64>>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, id) in row_ids.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::EmptyRowId(i));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateRowId(id.clone()));
            }
        }
        let mut names = HashSet::new();
        for c in &columns {
            if !names.insert(c.name.as_str()) {
                return Err(Error::DuplicateColumn(c.name.clone()));
            }
        }
        if cells.len() != row_ids.len() {
            return Err(Error::Shape(format!(
                "{} cell rows for {} row ids",
                cells.len(),
                row_ids.len()
            )));
        }
        if let Some((i, row)) = cells.iter().enumerate().find(|(_, r)| r.len() != columns.len()) {
            return Err(Error::Shape(format!(
                "row {:?} has {} cells, expected {}",
                row_ids[i],
                row.len(),
                columns.len()
            )));
        }
        Ok(Self {
            row_ids,
            columns,
            cells,
            provenance,
        })
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn columns(&self) -> &[AttributeMeta] {
        &self.columns
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    fn require_column(&self, name: &str) -> Result<usize> {
        self.column_index(name)
            .ok_or_else(|| Error::UnknownAttributes(vec![name.to_string()]))
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row][col]
    }

    pub fn row(&self, row: usize) -> &[Option<f64>] {
        &self.cells[row]
    }

    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let c = self.require_column(name)?;
        Ok(self.cells.iter().map(|r| r[c]).collect())
    }

    /// Present values of a column in row order.
    pub fn present_values(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.column(name)?.into_iter().flatten().collect())
    }

    /// Rows complete over `features`, as dense vectors, with their row indices.
    pub fn complete_rows(&self, features: &[String]) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        let idx = self.column_indices(features)?;
        let mut rows = Vec::new();
        let mut data = Vec::new();
        for (r, cells) in self.cells.iter().enumerate() {
            let v: Option<Vec<f64>> = idx.iter().map(|&c| cells[c]).collect();
            if let Some(v) = v {
                rows.push(r);
                data.push(v);
            }
        }
        Ok((rows, data))
    }

    pub fn column_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        let unknown: Vec<String> = names
            .iter()
            .filter(|n| self.column_index(n).is_none())
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownAttributes(unknown));
        }
        Ok(names.iter().filter_map(|n| self.column_index(n)).collect())
    }

    fn retain_rows(&self, keep: &[bool]) -> Self {
        let mut row_ids = Vec::new();
        let mut cells = Vec::new();
        for (i, k) in keep.iter().enumerate() {
            if *k {
                row_ids.push(self.row_ids[i].clone());
                cells.push(self.cells[i].clone());
            }
        }
        Self {
            row_ids,
            columns: self.columns.clone(),
            cells,
            provenance: self.provenance.clone(),
        }
    }

    /// Writes the table as CSV; missing cells are empty, reals use the shortest
    /// round-tripping representation.
    pub fn write_csv<W: Write>(&self, writer: W, id_header: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![id_header.to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for (id, row) in self.row_ids.iter().zip(&self.cells) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CleaningKind {
    SetMissing,
    DropRow,
}

/// One entry of the cleaning report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningAction {
    pub row_id: String,
    pub column: Option<String>,
    pub action: CleaningKind,
    pub reason: String,
}

fn parse_cell(text: &str) -> std::result::Result<Option<f64>, ()> {
    let t = text.trim();
    if t.is_empty() {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

/// Header names of a CSV source, identifier column first.
pub fn read_header<R: Read>(source: R) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    Ok(rdr.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

/// Schema inferred from header names (every data column after the identifier).
pub fn infer_schema<R: Read>(source: R) -> Result<Vec<AttributeMeta>> {
    Ok(read_header(source)?
        .iter()
        .skip(1)
        .map(|h| AttributeMeta::inferred(h))
        .collect())
}

/// Parses a CSV snapshot. The first column is the row identifier; the
/// remaining header names must match `schema` as a set. Unparseable numeric
/// cells become missing and are listed in the returned report.
pub fn load_csv<R: Read>(
    source: R,
    schema: &[AttributeMeta],
    source_name: &str,
) -> Result<(NumericTable, Vec<CleaningAction>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() {
        return Err(Error::Shape("CSV has no header".into()));
    }
    let data_names = &header[1..];

    let mut seen = HashSet::new();
    for n in data_names {
        if !seen.insert(n.as_str()) {
            return Err(Error::DuplicateColumn(n.clone()));
        }
    }
    let header_set: BTreeSet<&str> = data_names.iter().map(String::as_str).collect();
    let schema_set: BTreeSet<&str> = schema.iter().map(|m| m.name.as_str()).collect();
    let missing: Vec<String> = schema_set.difference(&header_set).map(|s| s.to_string()).collect();
    let extra: Vec<String> = header_set.difference(&schema_set).map(|s| s.to_string()).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::HeaderMismatch { missing, extra });
    }
    let columns: Vec<AttributeMeta> = data_names
        .iter()
        .map(|n| schema.iter().find(|m| &m.name == n).cloned().expect("checked"))
        .collect();

    let mut row_ids = Vec::new();
    let mut cells = Vec::new();
    let mut report = Vec::new();
    let mut ids = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::EmptyRowId(i + 1));
        }
        if !ids.insert(id.clone()) {
            return Err(Error::DuplicateRowId(id));
        }
        let mut row = Vec::with_capacity(columns.len());
        for (c, meta) in columns.iter().enumerate() {
            let text = rec.get(c + 1).unwrap_or("");
            match parse_cell(text) {
                Ok(v) => row.push(v),
                Err(()) => {
                    report.push(CleaningAction {
                        row_id: id.clone(),
                        column: Some(meta.name.clone()),
                        action: CleaningKind::SetMissing,
                        reason: format!("unparseable numeric value {:?}", text.trim()),
                    });
                    row.push(None);
                }
            }
        }
        row_ids.push(id);
        cells.push(row);
    }
    let table = NumericTable::new(row_ids, columns, cells, Provenance::now(source_name))?;
    Ok((table, report))
}

/// Removes rows whose identifier equals or contains any blocklist pattern.
pub fn drop_invalid_rows(
    table: &NumericTable,
    blocklist: &[String],
) -> (NumericTable, Vec<CleaningAction>) {
    let mut report = Vec::new();
    let keep: Vec<bool> = table
        .row_ids
        .iter()
        .map(|id| {
            let hit = blocklist
                .iter()
                .filter(|p| !p.is_empty())
                .find(|p| id == *p || id.contains(p.as_str()));
            if let Some(p) = hit {
                report.push(CleaningAction {
                    row_id: id.clone(),
                    column: None,
                    action: CleaningKind::DropRow,
                    reason: format!("row id matches blocklist pattern {p:?}"),
                });
                false
            } else {
                true
            }
        })
        .collect();
    (table.retain_rows(&keep), report)
}

/// Linear interpolation at position `(n - 1) * p` of an ascending sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

pub(crate) fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub std: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub iqr: f64,
    pub lower_fence: f64,
    pub upper_fence: f64,
    pub n_present: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

impl ColumnStats {
    pub fn from_values(values: &[f64], k: f64) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let sorted = sorted_copy(values);
        let (mean, std) = mean_std(values);
        let q1 = quantile_sorted(&sorted, 0.25);
        let median = quantile_sorted(&sorted, 0.5);
        let q3 = quantile_sorted(&sorted, 0.75);
        let iqr = q3 - q1;
        let (lower_fence, upper_fence) = if k.is_infinite() {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (q1 - k * iqr, q3 + k * iqr)
        };
        Some(Self {
            mean,
            std,
            q1,
            median,
            q3,
            iqr,
            lower_fence,
            upper_fence,
            n_present: values.len(),
        })
    }

    pub fn is_outlier(&self, value: f64) -> bool {
        value < self.lower_fence || value > self.upper_fence
    }
}

pub fn column_stats(table: &NumericTable, column: &str, k: f64) -> Result<ColumnStats> {
    let values = table.present_values(column)?;
    ColumnStats::from_values(&values, k).ok_or_else(|| Error::EmptyColumn(column.to_string()))
}

/// Statistics for every column, computed in parallel; output order follows the table.
pub fn all_column_stats(table: &NumericTable, k: f64) -> Vec<(String, Result<ColumnStats>)> {
    table
        .columns
        .par_iter()
        .map(|c| (c.name.clone(), column_stats(table, &c.name, k)))
        .collect()
}

pub fn iqr_outlier_flags(table: &NumericTable, column: &str, k: f64) -> Result<Vec<bool>> {
    let stats = column_stats(table, column, k)?;
    Ok(table
        .column(column)?
        .into_iter()
        .map(|v| v.is_some_and(|x| stats.is_outlier(x)))
        .collect())
}

/// Removes IQR outliers in `columns`: the cell becomes missing, or the whole
/// row is dropped when `drop_row` is set. Fences are computed once per column
/// on the input table.
pub fn remove_outliers(
    table: &NumericTable,
    columns: &[String],
    k: f64,
    drop_row: bool,
) -> Result<(NumericTable, Vec<CleaningAction>)> {
    let idx = table.column_indices(columns)?;
    let mut flags = Vec::with_capacity(idx.len());
    for name in columns {
        flags.push(iqr_outlier_flags(table, name, k)?);
    }
    let stats: Vec<ColumnStats> = columns
        .iter()
        .map(|c| column_stats(table, c, k))
        .collect::<Result<_>>()?;

    let mut out = table.clone();
    let mut report = Vec::new();
    let mut keep = vec![true; table.n_rows()];
    for r in 0..table.n_rows() {
        for (j, &c) in idx.iter().enumerate() {
            if !flags[j][r] {
                continue;
            }
            let value = table.cells[r][c].expect("flagged cells are present");
            let reason = format!(
                "value {value} outside [{}, {}]",
                stats[j].lower_fence, stats[j].upper_fence
            );
            if drop_row {
                if keep[r] {
                    keep[r] = false;
                    report.push(CleaningAction {
                        row_id: table.row_ids[r].clone(),
                        column: Some(columns[j].clone()),
                        action: CleaningKind::DropRow,
                        reason,
                    });
                }
            } else {
                out.cells[r][c] = None;
                report.push(CleaningAction {
                    row_id: table.row_ids[r].clone(),
                    column: Some(columns[j].clone()),
                    action: CleaningKind::SetMissing,
                    reason,
                });
            }
        }
    }
    if drop_row {
        out = out.retain_rows(&keep);
    }
    Ok((out, report))
}

/// Parameters of one z-scored column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub column: String,
    pub mean: f64,
    pub std: f64,
    /// Constant (or empty) column: every present value was mapped to 0.
    pub degenerate: bool,
}

pub fn zscore_normalize(
    table: &NumericTable,
    columns: &[String],
) -> Result<(NumericTable, Vec<ColumnScaling>)> {
    let idx = table.column_indices(columns)?;
    let mut out = table.clone();
    let mut scalings = Vec::with_capacity(idx.len());
    for (name, &c) in columns.iter().zip(&idx) {
        let values: Vec<f64> = table.cells.iter().filter_map(|r| r[c]).collect();
        let (mean, std) = if values.is_empty() {
            (0.0, 0.0)
        } else {
            mean_std(&values)
        };
        let degenerate = !(std > 0.0);
        for row in out.cells.iter_mut() {
            if let Some(x) = row[c] {
                row[c] = Some(if degenerate { 0.0 } else { (x - mean) / std });
            }
        }
        scalings.push(ColumnScaling {
            column: name.clone(),
            mean,
            std,
            degenerate,
        });
    }
    Ok((out, scalings))
}

/// Inverse of [`zscore_normalize`] for non-degenerate columns.
pub fn zscore_denormalize(table: &NumericTable, scalings: &[ColumnScaling]) -> Result<NumericTable> {
    let mut out = table.clone();
    for s in scalings.iter().filter(|s| !s.degenerate) {
        let c = table.require_column(&s.column)?;
        for row in out.cells.iter_mut() {
            if let Some(z) = row[c] {
                row[c] = Some(z * s.std + s.mean);
            }
        }
    }
    Ok(out)
}
