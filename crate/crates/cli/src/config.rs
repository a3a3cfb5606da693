//! Run configuration: one JSON file, overridable from the command line.

use std::path::{Path, PathBuf};

use carmine::discretizer::ThresholdConfig;
use carmine::rules::MiningParams;
use carmine::som::TrainingSchedule;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Prefix of rendered figure names.
    pub run_id: String,
    /// Raw snapshot CSV; the first column holds row identifiers.
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Text file with one row-id pattern per line (`#` starts a comment).
    pub blocklist: Option<PathBuf>,
    pub iqr_k: f64,
    pub outlier_columns: Vec<String>,
    pub drop_row: bool,
    /// Columns to z-score; all columns when absent.
    pub normalize_columns: Option<Vec<String>>,
    /// Threshold JSON; the bundled category table when absent.
    pub thresholds: Option<PathBuf>,
    /// Quantile-derived binnings, replacing any threshold entry of the same attribute.
    pub auto_thresholds: Vec<AutoBinning>,
    pub class_attribute: String,
    /// Attribute pairs to test; derived from the class attribute when absent.
    pub chi2_pairs: Option<Vec<[String; 2]>>,
    pub mining: MiningConfig,
    pub som: SomConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "carmine".into(),
            input: None,
            out_dir: PathBuf::from("out"),
            seed: 42,
            blocklist: None,
            iqr_k: 1.5,
            outlier_columns: vec!["TpM".into()],
            drop_row: false,
            normalize_columns: None,
            thresholds: None,
            auto_thresholds: Vec::new(),
            class_attribute: "DpM".into(),
            chi2_pairs: None,
            mining: MiningConfig::default(),
            som: SomConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoBinning {
    pub attribute: String,
    /// Quantile levels in (0, 1), e.g. `[0.25, 0.75]`.
    pub points: Vec<f64>,
    /// One label per bin; `Q1`, `Q2`, ... when absent.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub min_support: f64,
    pub min_confidence: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Consequent categories of the class attribute; every category when absent.
    pub target_classes: Option<Vec<String>>,
    pub lift_floor: Option<f64>,
}

impl Default for MiningConfig {
    fn default() -> Self {
        let p = MiningParams::new("");
        Self {
            min_support: p.min_support,
            min_confidence: p.min_confidence,
            min_len: p.min_len,
            max_len: p.max_len,
            target_classes: None,
            lift_floor: None,
        }
    }
}

impl MiningConfig {
    pub fn params(&self, class_attribute: &str) -> MiningParams {
        MiningParams {
            min_support: self.min_support,
            min_confidence: self.min_confidence,
            min_len: self.min_len,
            max_len: self.max_len,
            consequent_attribute: class_attribute.to_string(),
            target_classes: self.target_classes.clone(),
            lift_floor: self.lift_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SomConfig {
    pub rows: usize,
    pub cols: usize,
    pub epochs: usize,
    pub eta0: f64,
    /// `max(rows, cols) / 2` when absent.
    pub sigma0: Option<f64>,
    pub eta_final: f64,
    pub sigma_final: f64,
    pub runs: Vec<SomRun>,
}

impl Default for SomConfig {
    fn default() -> Self {
        let s = TrainingSchedule::default_for(8, 8);
        Self {
            rows: 8,
            cols: 8,
            epochs: s.epochs,
            eta0: s.eta0,
            sigma0: None,
            eta_final: s.eta_final,
            sigma_final: s.sigma_final,
            runs: vec![
                SomRun {
                    name: "covid".into(),
                    features: ["DpM", "CpM", "TpM"].map(String::from).to_vec(),
                    label: Some("DpM".into()),
                },
                SomRun {
                    name: "demographics".into(),
                    features: Vec::new(),
                    label: Some("DpM".into()),
                },
            ],
        }
    }
}

impl SomConfig {
    pub fn schedule(&self) -> TrainingSchedule {
        TrainingSchedule {
            epochs: self.epochs,
            eta0: self.eta0,
            sigma0: self
                .sigma0
                .unwrap_or(self.rows.max(self.cols) as f64 / 2.0),
            eta_final: self.eta_final,
            sigma_final: self.sigma_final,
            neighborhood: Default::default(),
        }
    }
}

/// One map trained on a feature subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SomRun {
    pub name: String,
    /// Normalized columns to train on; every demographic column when empty.
    #[serde(default)]
    pub features: Vec<String>,
    /// Categorical attribute whose labels annotate the map.
    #[serde(default)]
    pub label: Option<String>,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        resolve(&base, &mut cfg.input);
        resolve(&base, &mut cfg.blocklist);
        resolve(&base, &mut cfg.thresholds);
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.run_id.trim().is_empty() {
            return bad("run_id must not be empty".into());
        }
        for (what, p) in [("blocklist", &self.blocklist), ("thresholds", &self.thresholds)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return bad(format!("{what} file {} not found", p.display()));
                }
            }
        }
        if !(self.iqr_k >= 0.0) {
            return bad(format!("iqr_k must be non-negative, got {}", self.iqr_k));
        }
        for a in &self.auto_thresholds {
            if a.points.is_empty() || a.points.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
                return bad(format!("auto_thresholds for {}: points must lie in (0, 1)", a.attribute));
            }
            if let Some(l) = &a.labels {
                if l.len() != a.points.len() + 1 {
                    return bad(format!(
                        "auto_thresholds for {}: {} points need {} labels",
                        a.attribute,
                        a.points.len(),
                        a.points.len() + 1
                    ));
                }
            }
        }
        self.mining
            .params(&self.class_attribute)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.som.rows == 0 || self.som.cols == 0 {
            return bad("som rows and cols must be positive".into());
        }
        self.som
            .schedule()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let mut names: Vec<&str> = self.som.runs.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.iter().any(|n| n.is_empty()) {
            return bad("som run names must be unique and non-empty".into());
        }
        self.threshold_base()?;
        Ok(())
    }

    /// The configured threshold table before any quantile binnings are added.
    pub fn threshold_base(&self) -> Result<ThresholdConfig, CliError> {
        match &self.thresholds {
            None => Ok(ThresholdConfig::bundled()),
            Some(p) => {
                let f = std::fs::File::open(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                ThresholdConfig::from_reader(f)
                    .map_err(|e| CliError::Config(format!("thresholds {}: {e}", p.display())))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 7, "mining": {"min_confidence": 0.8}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mining.min_confidence, 0.8);
        assert_eq!(cfg.mining.max_len, 5);
        assert_eq!(cfg.som.rows, 8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 7}"#).is_err());
    }

    #[test]
    fn invalid_values() {
        let mut cfg = RunConfig::default();
        cfg.mining.min_len = 1;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.som.eta0 = 2.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.auto_thresholds.push(AutoBinning {
            attribute: "Beds".into(),
            points: vec![0.5],
            labels: Some(vec!["a".into()]),
        });
        assert!(cfg.validate().is_err());
    }
}
