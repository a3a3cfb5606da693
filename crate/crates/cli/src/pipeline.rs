//! Pipeline stages. Each stage reads the persisted output of the previous
//! one from the output directory and writes its own files there, so running
//! the subcommands in order produces the same bytes as a full run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use carmine::discretizer::{
    auto_thresholds, category_histogram, discretize_table, Binning, CategoricalTable,
    ThresholdConfig,
};
use carmine::render::{
    figure_file_name, render_histogram, render_node_map, render_rule_graph, ColorScale,
    NodeMapOptions, RuleGraphOptions,
};
use carmine::rules::{
    antecedent_histogram, encode_transactions, mine_cars, name_rules, rules_from_json,
    rules_to_json, write_rule_table, NamedRule,
};
use carmine::som::{node_values_json, MapOverlay, OverlayEntry, SomDataset, SomGrid};
use carmine::stats::test_pair;
use carmine::tabular::{
    drop_invalid_rows, infer_schema, load_csv, read_header, remove_outliers, zscore_normalize,
    AttributeRole, NumericTable,
};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const INGESTED: &str = "ingested.csv";
pub const INGEST_REPORT: &str = "ingest_report.json";
pub const CLEANED: &str = "cleaned.csv";
pub const NORMALIZED: &str = "normalized.csv";
pub const NORMALIZATION: &str = "normalization.json";
pub const CLEANING_REPORT: &str = "cleaning_report.json";
pub const CATEGORICAL: &str = "categorical.csv";
pub const THRESHOLDS: &str = "thresholds.json";
pub const CATEGORY_COUNTS: &str = "category_counts.json";
pub const CHI2: &str = "chi2.json";
pub const RULES_JSON: &str = "rules.json";
pub const RULES_TXT: &str = "rules.txt";
pub const MINING_REPORT: &str = "mining_report.json";
pub const RUN_REPORT: &str = "run_report.json";

fn som_file(run: &str, what: &str) -> String {
    format!("som_{run}_{what}.json")
}

/// What a stage wrote and a JSON summary of what it did.
#[derive(Debug, Clone, Serialize)]
pub struct StageOutput {
    pub stage: &'static str,
    pub files: Vec<String>,
    pub summary: Value,
}

/// Files are first written as `<name>.partial` and renamed only once the
/// whole stage has succeeded.
struct Staging<'a> {
    dir: &'a Path,
    stage: &'static str,
    files: Vec<String>,
}

impl<'a> Staging<'a> {
    fn new(dir: &'a Path, stage: &'static str) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| {
            CliError::Config(format!("cannot create output directory {}: {e}", dir.display()))
        })?;
        Ok(Self {
            dir,
            stage,
            files: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(format!("{name}.partial"));
        fs::write(&path, bytes).map_err(|e| stage_error(self.stage, format!("{}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn put_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| stage_error(self.stage, e))?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    fn commit(self, summary: Value) -> Result<StageOutput, CliError> {
        for name in &self.files {
            let from = self.dir.join(format!("{name}.partial"));
            fs::rename(&from, self.dir.join(name))
                .map_err(|e| stage_error(self.stage, format!("{}: {e}", from.display())))?;
        }
        Ok(StageOutput {
            stage: self.stage,
            files: self.files,
            summary,
        })
    }
}

fn stage_error(stage: &'static str, e: impl std::fmt::Display) -> CliError {
    CliError::Stage {
        stage,
        message: e.to_string(),
    }
}

fn open(path: &Path, stage: &'static str) -> Result<fs::File, CliError> {
    fs::File::open(path).map_err(|e| {
        CliError::Config(format!(
            "{stage}: cannot open input {}: {e}",
            path.display()
        ))
    })
}

fn header_of(path: &Path, stage: &'static str) -> Result<Vec<String>, CliError> {
    read_header(open(path, stage)?)
        .map_err(|e| CliError::Config(format!("{stage}: {}: {e}", path.display())))
}

/// Fails naming the expected and the actual columns when `want` is not
/// covered by the data columns of `header`.
fn require_columns(
    stage: &'static str,
    path: &Path,
    header: &[String],
    want: &[String],
) -> Result<(), CliError> {
    let data = header.get(1..).unwrap_or_default();
    let missing: Vec<&String> = want.iter().filter(|w| !data.contains(w)).collect();
    if missing.is_empty() {
        return Ok(());
    }
    Err(CliError::Config(format!(
        "{stage}: {} lacks columns {missing:?}; expected at least {want:?}, found {data:?}",
        path.display()
    )))
}

fn read_numeric(path: &Path, stage: &'static str) -> Result<(NumericTable, String), CliError> {
    let header = header_of(path, stage)?;
    let schema = infer_schema(open(path, stage)?).map_err(|e| stage_error(stage, e))?;
    let (t, report) = load_csv(open(path, stage)?, &schema, &path.display().to_string())
        .map_err(|e| stage_error(stage, format!("{}: {e}", path.display())))?;
    if let Some(bad) = report.first() {
        return Err(stage_error(
            stage,
            format!("{}: {} ({} cells)", path.display(), bad.reason, report.len()),
        ));
    }
    Ok((t, header[0].clone()))
}

fn csv_bytes(
    stage: &'static str,
    write: impl FnOnce(&mut Vec<u8>) -> carmine::Result<()>,
) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| stage_error(stage, e))?;
    Ok(buf)
}

/// Thresholds persisted by `discretize`, if any.
fn stored_thresholds(dir: &Path, stage: &'static str) -> Result<Option<ThresholdConfig>, CliError> {
    let path = dir.join(THRESHOLDS);
    if !path.is_file() {
        return Ok(None);
    }
    ThresholdConfig::from_reader(open(&path, stage)?)
        .map(Some)
        .map_err(|e| stage_error(stage, format!("{}: {e}", path.display())))
}

fn read_categorical(
    cfg: &RunConfig,
    input: Option<&Path>,
    stage: &'static str,
) -> Result<(CategoricalTable, PathBuf, String), CliError> {
    let path = input.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join(CATEGORICAL));
    let header = header_of(&path, stage)?;
    let thresholds = stored_thresholds(&cfg.out_dir, stage)?;
    let t = CategoricalTable::read_csv(open(&path, stage)?, thresholds.as_ref())
        .map_err(|e| stage_error(stage, format!("{}: {e}", path.display())))?;
    Ok((t, path, header[0].clone()))
}

// ---------------------------------------------------------------------------
// ingest

pub fn ingest(cfg: &RunConfig, input: Option<&Path>) -> Result<StageOutput, CliError> {
    const STAGE: &str = "ingest";
    let path = input
        .map(Path::to_path_buf)
        .or_else(|| cfg.input.clone())
        .ok_or_else(|| CliError::Config("ingest: no input CSV given (config `input` or --input)".into()))?;
    let header = header_of(&path, STAGE)?;
    let schema = infer_schema(open(&path, STAGE)?).map_err(|e| stage_error(STAGE, e))?;
    let (table, report) = load_csv(open(&path, STAGE)?, &schema, &path.display().to_string())
        .map_err(|e| stage_error(STAGE, format!("{}: {e}", path.display())))?;

    let mut out = Staging::new(&cfg.out_dir, STAGE)?;
    out.put(INGESTED, &csv_bytes(STAGE, |b| table.write_csv(b, &header[0]))?)?;
    out.put_json(INGEST_REPORT, &report)?;
    out.commit(json!({
        "rows": table.n_rows(),
        "columns": table.n_cols(),
        "unparseable_cells": report.len(),
    }))
}

// ---------------------------------------------------------------------------
// clean

fn read_blocklist(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("blocklist {}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn normalize_columns(cfg: &RunConfig, header: &[String]) -> Vec<String> {
    cfg.normalize_columns
        .clone()
        .unwrap_or_else(|| header[1..].to_vec())
}

pub fn clean(cfg: &RunConfig, input: Option<&Path>) -> Result<StageOutput, CliError> {
    const STAGE: &str = "clean";
    let path = input.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join(INGESTED));
    let header = header_of(&path, STAGE)?;
    let norm_cols = normalize_columns(cfg, &header);
    require_columns(STAGE, &path, &header, &cfg.outlier_columns)?;
    require_columns(STAGE, &path, &header, &norm_cols)?;
    let blocklist = match &cfg.blocklist {
        Some(p) => read_blocklist(p)?,
        None => Vec::new(),
    };
    let (table, id_header) = read_numeric(&path, STAGE)?;

    let (kept, mut report) = drop_invalid_rows(&table, &blocklist);
    let (cleaned, outliers) = remove_outliers(&kept, &cfg.outlier_columns, cfg.iqr_k, cfg.drop_row)
        .map_err(|e| stage_error(STAGE, e))?;
    report.extend(outliers);
    let (normalized, scalings) =
        zscore_normalize(&cleaned, &norm_cols).map_err(|e| stage_error(STAGE, e))?;

    let mut out = Staging::new(&cfg.out_dir, STAGE)?;
    out.put(CLEANED, &csv_bytes(STAGE, |b| cleaned.write_csv(b, &id_header))?)?;
    out.put(NORMALIZED, &csv_bytes(STAGE, |b| normalized.write_csv(b, &id_header))?)?;
    out.put_json(NORMALIZATION, &scalings)?;
    out.put_json(CLEANING_REPORT, &report)?;
    let removed: Vec<&str> = table
        .row_ids()
        .iter()
        .filter(|id| !cleaned.row_ids().contains(id))
        .map(String::as_str)
        .collect();
    out.commit(json!({
        "rows_in": table.n_rows(),
        "rows_out": cleaned.n_rows(),
        "excluded_rows": removed,
        "actions": report.len(),
        "degenerate_columns": scalings.iter().filter(|s| s.degenerate).map(|s| &s.column).collect::<Vec<_>>(),
    }))
}

// ---------------------------------------------------------------------------
// discretize

/// Bundled thresholds cover only the columns present; a user table must
/// match the data exactly.
fn base_thresholds(cfg: &RunConfig, columns: &[String]) -> Result<ThresholdConfig, CliError> {
    let base = cfg.threshold_base()?;
    if cfg.thresholds.is_some() {
        return Ok(base);
    }
    let mut out = ThresholdConfig::new();
    for (a, b) in base.attributes().filter(|(a, _)| columns.iter().any(|c| c == a)) {
        out.insert(a, b.clone()).expect("bundled binnings are valid");
    }
    Ok(out)
}

/// Attributes the discretize stage will produce for data with `columns`.
pub fn discretized_attributes(cfg: &RunConfig, columns: &[String]) -> Result<Vec<String>, CliError> {
    let mut attrs: Vec<String> = base_thresholds(cfg, columns)?
        .attributes()
        .map(|(a, _)| a.to_string())
        .collect();
    for a in &cfg.auto_thresholds {
        if !attrs.contains(&a.attribute) {
            attrs.push(a.attribute.clone());
        }
    }
    Ok(attrs)
}

pub fn discretize(cfg: &RunConfig, input: Option<&Path>) -> Result<StageOutput, CliError> {
    const STAGE: &str = "discretize";
    let path = input.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join(CLEANED));
    let header = header_of(&path, STAGE)?;
    let mut thresholds = base_thresholds(cfg, &header[1..])?;
    let mut wanted: Vec<String> = thresholds.attributes().map(|(a, _)| a.to_string()).collect();
    wanted.extend(cfg.auto_thresholds.iter().map(|a| a.attribute.clone()));
    require_columns(STAGE, &path, &header, &wanted)?;
    let (table, id_header) = read_numeric(&path, STAGE)?;

    let mut warnings = Vec::new();
    for auto in &cfg.auto_thresholds {
        let values = table.present_values(&auto.attribute).map_err(|e| stage_error(STAGE, e))?;
        let cuts = auto_thresholds(&values, &auto.points)
            .map_err(|e| stage_error(STAGE, format!("{}: {e}", auto.attribute)))?;
        let labels = match &auto.labels {
            Some(l) if l.len() == cuts.cuts.len() + 1 => l.clone(),
            Some(l) => {
                return Err(stage_error(
                    STAGE,
                    format!(
                        "{}: quantile cuts collapsed to {} bins but {} labels were given",
                        auto.attribute,
                        cuts.cuts.len() + 1,
                        l.len()
                    ),
                ))
            }
            None => (1..=cuts.cuts.len() + 1).map(|i| format!("Q{i}")).collect(),
        };
        warnings.extend(cuts.warnings.iter().map(|w| format!("{}: {w}", auto.attribute)));
        let binning = Binning::new(cuts.cuts, labels).map_err(|e| stage_error(STAGE, e))?;
        thresholds
            .insert(auto.attribute.clone(), binning)
            .map_err(|e| stage_error(STAGE, e))?;
    }
    let cat = discretize_table(&table, &thresholds).map_err(|e| stage_error(STAGE, e))?;
    let mut counts = BTreeMap::new();
    for a in cat.attributes() {
        counts.insert(a.clone(), category_histogram(&cat, a).map_err(|e| stage_error(STAGE, e))?);
    }

    let mut out = Staging::new(&cfg.out_dir, STAGE)?;
    out.put(CATEGORICAL, &csv_bytes(STAGE, |b| cat.write_csv(b, &id_header))?)?;
    let mut th = thresholds.to_json_pretty().map_err(|e| stage_error(STAGE, e))?;
    th.push('\n');
    out.put(THRESHOLDS, th.as_bytes())?;
    out.put_json(CATEGORY_COUNTS, &counts)?;
    out.commit(json!({
        "rows": cat.n_rows(),
        "attributes": cat.attributes(),
        "warnings": warnings,
    }))
}

// ---------------------------------------------------------------------------
// chi2

/// Every non-outcome attribute against the class, then DpM x CpM and TpM x CpM.
pub fn default_pairs(cfg: &RunConfig, attributes: &[String]) -> Vec<[String; 2]> {
    let class = &cfg.class_attribute;
    let outcome = |a: &str| ["DpM", "CpM", "TpM"].contains(&a);
    let mut pairs: Vec<[String; 2]> = attributes
        .iter()
        .filter(|a| *a != class && !outcome(a))
        .map(|a| [a.clone(), class.clone()])
        .collect();
    for (x, y) in [("DpM", "CpM"), ("TpM", "CpM")] {
        if attributes.iter().any(|a| a == x) && attributes.iter().any(|a| a == y) {
            pairs.push([x.to_string(), y.to_string()]);
        }
    }
    pairs
}

pub fn chi2(
    cfg: &RunConfig,
    input: Option<&Path>,
    single: Option<(&str, &str)>,
) -> Result<StageOutput, CliError> {
    const STAGE: &str = "chi2";
    let (cat, path, _) = read_categorical(cfg, input, STAGE)?;
    let attrs = cat.attributes().to_vec();
    let header: Vec<String> = std::iter::once(String::new()).chain(attrs.iter().cloned()).collect();

    let mut out = Staging::new(&cfg.out_dir, STAGE)?;
    if let Some((x, y)) = single {
        require_columns(STAGE, &path, &header, &[x.to_string(), y.to_string()])?;
        let entry = test_pair(&cat, x, y).map_err(|e| stage_error(STAGE, e))?;
        out.put_json(&format!("chi2_{x}_{y}.json"), &entry)?;
        let summary = serde_json::to_value(&entry).map_err(|e| stage_error(STAGE, e))?;
        return out.commit(summary);
    }

    let pairs = cfg.chi2_pairs.clone().unwrap_or_else(|| default_pairs(cfg, &attrs));
    let needed: Vec<String> = pairs.iter().flatten().cloned().collect();
    require_columns(STAGE, &path, &header, &needed)?;
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for [x, y] in &pairs {
        match test_pair(&cat, x, y) {
            Ok(e) => entries.push(e),
            Err(e) => skipped.push(json!({"x": x, "y": y, "reason": e.to_string()})),
        }
    }
    out.put_json(CHI2, &entries)?;
    out.commit(json!({"tests": entries.len(), "skipped": skipped}))
}

// ---------------------------------------------------------------------------
// som

fn som_features(run: &crate::config::SomRun, table: &NumericTable) -> Vec<String> {
    if !run.features.is_empty() {
        return run.features.clone();
    }
    table
        .columns()
        .iter()
        .filter(|m| m.role == AttributeRole::Demographic)
        .map(|m| m.name.clone())
        .collect()
}

pub fn som(cfg: &RunConfig, input: Option<&Path>) -> Result<StageOutput, CliError> {
    const STAGE: &str = "som";
    let path = input.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join(NORMALIZED));
    let header = header_of(&path, STAGE)?;
    let explicit: Vec<String> = cfg.som.runs.iter().flat_map(|r| r.features.clone()).collect();
    require_columns(STAGE, &path, &header, &explicit)?;
    let (table, _) = read_numeric(&path, STAGE)?;
    let labels = if cfg.som.runs.iter().any(|r| r.label.is_some()) {
        Some(read_categorical(cfg, None, STAGE)?.0)
    } else {
        None
    };
    let schedule = cfg.som.schedule();

    let mut out = Staging::new(&cfg.out_dir, STAGE)?;
    let mut runs = Vec::new();
    for run in &cfg.som.runs {
        let features = som_features(run, &table);
        let label_of: BTreeMap<&str, String> = match (&run.label, &labels) {
            (Some(attr), Some(cat)) => {
                let ls = cat.labels_of(attr).map_err(|e| stage_error(STAGE, e))?;
                cat.row_ids()
                    .iter()
                    .zip(ls)
                    .filter_map(|(id, l)| l.map(|l| (id.as_str(), l.to_string())))
                    .collect()
            }
            _ => BTreeMap::new(),
        };
        let ds = SomDataset::from_table(&table, &features, |id| label_of.get(id).cloned())
            .map_err(|e| stage_error(STAGE, format!("{}: {e}", run.name)))?;
        let trained = SomGrid::init_from_table(cfg.som.rows, cfg.som.cols, cfg.seed, &table, &features)
            .and_then(|g| g.train(&ds.data, &schedule))
            .map_err(|e| stage_error(STAGE, format!("{}: {e}", run.name)))?;
        let grid = trained.grid;
        let overlay = grid.map_samples(&ds).map_err(|e| stage_error(STAGE, e))?;
        let mut planes = BTreeMap::new();
        for (i, f) in features.iter().enumerate() {
            let plane = grid.component_plane(i).map_err(|e| stage_error(STAGE, e))?;
            let by_node: BTreeMap<usize, f64> = plane.iter().enumerate().map(|(j, v)| (j + 1, *v)).collect();
            planes.insert(f.clone(), by_node);
        }
        let json_text = |r: carmine::Result<String>| -> Result<Vec<u8>, CliError> {
            let mut s = r.map_err(|e| stage_error(STAGE, e))?;
            s.push('\n');
            Ok(s.into_bytes())
        };
        out.put(&som_file(&run.name, "grid"), &json_text(grid.to_json())?)?;
        out.put(&som_file(&run.name, "umatrix"), &json_text(node_values_json(&grid.u_matrix()))?)?;
        out.put_json(&som_file(&run.name, "planes"), &planes)?;
        out.put(&som_file(&run.name, "overlay"), &json_text(overlay.to_json())?)?;
        out.put_json(&som_file(&run.name, "qe"), &trained.quantization_error)?;
        runs.push(json!({
            "name": run.name,
            "features": features,
            "rows": ds.data.len(),
            "excluded_rows": ds.excluded,
            "first_qe": trained.quantization_error.first(),
            "final_qe": trained.quantization_error.last(),
        }));
    }
    out.commit(json!({ "runs": runs }))
}

// ---------------------------------------------------------------------------
// mine

pub fn mine(cfg: &RunConfig, input: Option<&Path>) -> Result<StageOutput, CliError> {
    const STAGE: &str = "mine";
    let (cat, path, _) = read_categorical(cfg, input, STAGE)?;
    let header: Vec<String> = std::iter::once(String::new()).chain(cat.attributes().iter().cloned()).collect();
    require_columns(STAGE, &path, &header, &[cfg.class_attribute.clone()])?;
    let params = cfg.mining.params(&cfg.class_attribute);
    let ts = encode_transactions(&cat, &cfg.class_attribute).map_err(|e| stage_error(STAGE, e))?;
    let mined = mine_cars(&ts, &params).map_err(|e| stage_error(STAGE, e))?;
    let rules = name_rules(&mined.rules, ts.dictionary());

    let mut by_consequent: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for r in &rules {
        by_consequent.entry(r.consequent.to_string()).or_default();
    }
    for (c, hist) in by_consequent.iter_mut() {
        let subset: Vec<NamedRule> = rules.iter().filter(|r| r.consequent.to_string() == *c).cloned().collect();
        *hist = antecedent_histogram(&subset).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    }

    let mut out = Staging::new(&cfg.out_dir, STAGE)?;
    let mut rj = rules_to_json(&rules).map_err(|e| stage_error(STAGE, e))?;
    rj.push('\n');
    out.put(RULES_JSON, rj.as_bytes())?;
    out.put(RULES_TXT, &csv_bytes(STAGE, |b| write_rule_table(b, &rules))?)?;
    let report = json!({
        "params": params,
        "transactions": ts.len(),
        "excluded_rows": ts.excluded,
        "filter_counts": mined.counts,
        "warnings": mined.warnings,
        "antecedent_histograms": by_consequent,
    });
    out.put_json(MINING_REPORT, &report)?;
    out.commit(json!({
        "rules": rules.len(),
        "filter_counts": mined.counts,
        "excluded_rows": ts.excluded,
        "warnings": mined.warnings,
    }))
}

// ---------------------------------------------------------------------------
// render

fn read_json_file(dir: &Path, name: &str, stage: &'static str) -> Result<String, CliError> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| {
        CliError::Config(format!("{stage}: cannot read {}: {e}", path.display()))
    })
}

fn overlay_from_json(text: &str, rows: usize, cols: usize) -> Result<MapOverlay, String> {
    let by_node: BTreeMap<usize, Vec<OverlayEntry>> =
        serde_json::from_str(text).map_err(|e| e.to_string())?;
    let mut members = vec![Vec::new(); rows * cols];
    for (node, m) in by_node {
        let slot = members
            .get_mut(node.wrapping_sub(1))
            .ok_or_else(|| format!("overlay node {node} outside a {rows}x{cols} grid"))?;
        *slot = m;
    }
    Ok(MapOverlay { rows, cols, members })
}

pub fn render(cfg: &RunConfig) -> Result<StageOutput, CliError> {
    const STAGE: &str = "render";
    let dir = &cfg.out_dir;
    let (cat, _, _) = read_categorical(cfg, None, STAGE)?;
    let rules = rules_from_json(&read_json_file(dir, RULES_JSON, STAGE)?)
        .map_err(|e| stage_error(STAGE, format!("{RULES_JSON}: {e}")))?;
    let mut grids = Vec::new();
    for run in &cfg.som.runs {
        let grid = SomGrid::from_json(&read_json_file(dir, &som_file(&run.name, "grid"), STAGE)?)
            .map_err(|e| stage_error(STAGE, e))?;
        let overlay = overlay_from_json(
            &read_json_file(dir, &som_file(&run.name, "overlay"), STAGE)?,
            grid.rows,
            grid.cols,
        )
        .map_err(|e| stage_error(STAGE, e))?;
        grids.push((run, grid, overlay));
    }

    let name = |kind: &str, attr: &str| figure_file_name(&cfg.run_id, kind, attr);
    let mut out = Staging::new(dir, STAGE)?;
    for (a, attr) in cat.attributes().iter().enumerate() {
        let hist = category_histogram(&cat, attr).map_err(|e| stage_error(STAGE, e))?;
        let bars: Vec<(String, usize)> = cat
            .categories(a)
            .iter()
            .map(|c| (c.clone(), hist.get(c).copied().unwrap_or(0)))
            .collect();
        out.put(&name("categories", attr), render_histogram(&bars, attr).as_bytes())?;
    }
    for (run, grid, overlay) in &grids {
        let label_order = run
            .label
            .as_deref()
            .and_then(|l| cat.attribute_index(l))
            .map(|i| cat.categories(i).to_vec())
            .unwrap_or_default();
        let opts = NodeMapOptions {
            title: format!("{} distance map", run.name),
            label_order,
        };
        let svg = render_node_map(&grid.u_matrix(), Some(overlay), &ColorScale::light_to_dark(), grid.rows, grid.cols, &opts)
            .map_err(|e| stage_error(STAGE, e))?;
        out.put(&name("umatrix", &run.name), svg.as_bytes())?;
        for (i, f) in grid.features.iter().enumerate() {
            let plane = grid.component_plane(i).map_err(|e| stage_error(STAGE, e))?;
            let opts = NodeMapOptions {
                title: f.clone(),
                ..Default::default()
            };
            let svg = render_node_map(&plane, None, &ColorScale::blue_to_red(), grid.rows, grid.cols, &opts)
                .map_err(|e| stage_error(STAGE, e))?;
            out.put(&name("plane", &format!("{}-{f}", run.name)), svg.as_bytes())?;
        }
    }
    let mut consequents: Vec<_> = rules.iter().map(|r| r.consequent.clone()).collect();
    consequents.sort();
    consequents.dedup();
    for c in &consequents {
        let subset: Vec<NamedRule> = rules.iter().filter(|r| &r.consequent == c).cloned().collect();
        let key = format!("{}={}", c.attribute, c.category);
        let opts = RuleGraphOptions {
            title: format!("rules for {c}"),
            ..Default::default()
        };
        out.put(&name("rules", &key), render_rule_graph(&subset, &opts).as_bytes())?;
        let hist: Vec<(String, usize)> = antecedent_histogram(&subset)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        out.put(
            &name("antecedents", &key),
            render_histogram(&hist, &format!("antecedents for {c}")).as_bytes(),
        )?;
    }
    let figures = out.files.len();
    out.commit(json!({ "figures": figures }))
}

// ---------------------------------------------------------------------------
// full run

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: &'static str,
    pub seconds: f64,
    pub files: Vec<String>,
    pub summary: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub run_id: String,
    pub seed: u64,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    /// Row count per category of the class attribute.
    pub class_counts: Value,
    pub chi2: Value,
    pub cleaning: Value,
    pub filter_counts: Value,
    pub manifest: Vec<ManifestEntry>,
}

/// Checks the config against the input header before any stage runs.
pub fn validate_for_input(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no `input`".into()))?;
    if !input.is_file() {
        return Err(CliError::Config(format!("input {} not found", input.display())));
    }
    let header = read_header(open(input, "run")?)
        .map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
    let columns = &header[1..];
    let unknown = |what: &str, names: &[String], known: &[String]| -> Result<(), CliError> {
        let bad: Vec<&String> = names.iter().filter(|n| !known.contains(n)).collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!("unknown attributes in {what}: {bad:?}")))
        }
    };
    unknown("outlier_columns", &cfg.outlier_columns, columns)?;
    unknown("normalize_columns", &normalize_columns(cfg, &header), columns)?;
    let base: Vec<String> = cfg.threshold_base()?.attributes().map(|(a, _)| a.to_string()).collect();
    if cfg.thresholds.is_some() {
        unknown("thresholds", &base, columns)?;
    }
    let autos: Vec<String> = cfg.auto_thresholds.iter().map(|a| a.attribute.clone()).collect();
    unknown("auto_thresholds", &autos, columns)?;
    let discretized = discretized_attributes(cfg, columns)?;
    unknown("class_attribute", std::slice::from_ref(&cfg.class_attribute), &discretized)?;
    if let Some(pairs) = &cfg.chi2_pairs {
        let flat: Vec<String> = pairs.iter().flatten().cloned().collect();
        unknown("chi2_pairs", &flat, &discretized)?;
    }
    for run in &cfg.som.runs {
        unknown(&format!("som run {}", run.name), &run.features, columns)?;
        if let Some(l) = &run.label {
            unknown(&format!("som run {} label", run.name), std::slice::from_ref(l), &discretized)?;
        }
    }
    if let (Some(targets), Some(b)) = (&cfg.mining.target_classes, cfg.threshold_base()?.get(&cfg.class_attribute)) {
        if !cfg.auto_thresholds.iter().any(|a| a.attribute == cfg.class_attribute) {
            unknown("target_classes", targets, &b.labels)?;
        }
    }
    Ok(())
}

fn manifest(dir: &Path, files: &[String]) -> Result<Vec<ManifestEntry>, CliError> {
    let mut names = files.to_vec();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .map(|file| {
            let bytes = fs::read(dir.join(&file)).map_err(|e| stage_error("run", format!("{file}: {e}")))?;
            let digest = Sha256::digest(&bytes);
            Ok(ManifestEntry {
                bytes: bytes.len() as u64,
                sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
                file,
            })
        })
        .collect()
}

/// All stages in order, followed by `run_report.json`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport, CliError> {
    validate_for_input(cfg)?;
    type StageFn = fn(&RunConfig) -> Result<StageOutput, CliError>;
    let stages: [StageFn; 7] = [
        |c| ingest(c, None),
        |c| clean(c, None),
        |c| discretize(c, None),
        |c| chi2(c, None, None),
        |c| som(c, None),
        |c| mine(c, None),
        render,
    ];
    let mut records = Vec::new();
    for f in stages {
        let t = Instant::now();
        let out = f(cfg).map_err(|e| match e {
            CliError::Config(m) => CliError::Stage {
                stage: "run",
                message: m,
            },
            e => e,
        })?;
        records.push(StageRecord {
            stage: out.stage,
            seconds: t.elapsed().as_secs_f64(),
            files: out.files,
            summary: out.summary,
        });
    }
    let files: Vec<String> = records.iter().flat_map(|r| r.files.clone()).collect();
    let read = |name: &str| -> Result<Value, CliError> {
        serde_json::from_str(&read_json_file(&cfg.out_dir, name, "run")?).map_err(|e| stage_error("run", e))
    };
    let report = RunReport {
        run_id: cfg.run_id.clone(),
        seed: cfg.seed,
        config: cfg.clone(),
        class_counts: read(CATEGORY_COUNTS)?[&cfg.class_attribute].clone(),
        chi2: read(CHI2)?,
        cleaning: read(CLEANING_REPORT)?,
        filter_counts: records
            .iter()
            .find(|r| r.stage == "mine")
            .map(|r| r.summary["filter_counts"].clone())
            .unwrap_or(Value::Null),
        manifest: manifest(&cfg.out_dir, &files)?,
        stages: records,
    };
    let mut out = Staging::new(&cfg.out_dir, "run")?;
    out.put_json(RUN_REPORT, &report)?;
    out.commit(Value::Null)?;
    Ok(report)
}
