use std::path::PathBuf;
use std::process::ExitCode;

use carmine::rules::NamedItem;
use carmine_cli::config::RunConfig;
use carmine_cli::pipeline::{self, StageOutput};
use carmine_cli::CliError;
use clap::{Args, Parser, Subcommand};

/// Categorical association rule mining and self-organizing maps over a
/// country-level COVID-19 snapshot.
#[derive(Parser)]
#[command(name = "carmine", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stage input file instead of the previous stage's output.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write run_report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Load the raw snapshot CSV.
    Ingest(#[command(flatten)] Common),
    /// Drop blocklisted rows, remove outliers and z-score.
    Clean {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        iqr_k: Option<f64>,
        #[arg(long)]
        drop_row: bool,
        #[arg(long)]
        blocklist: Option<PathBuf>,
        /// Comma-separated columns screened for outliers.
        #[arg(long, value_delimiter = ',')]
        outlier_columns: Option<Vec<String>>,
    },
    /// Map cleaned values to categories.
    Discretize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Chi-square tests of independence.
    Chi2 {
        #[command(flatten)]
        common: Common,
        /// Test a single pair; requires --y.
        #[arg(long, requires = "y")]
        x: Option<String>,
        #[arg(long, requires = "x")]
        y: Option<String>,
    },
    /// Train the self-organizing maps.
    Som {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Mine class association rules.
    Mine {
        #[command(flatten)]
        common: Common,
        /// Target class as ATTRIBUTE=CATEGORY; repeatable.
        #[arg(long)]
        consequent: Vec<String>,
        #[arg(long)]
        min_conf: Option<f64>,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        min_support: Option<f64>,
        #[arg(long)]
        lift_floor: Option<f64>,
        /// Mining parameters as a JSON file, applied before the other flags.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Write SVG figures from the stage outputs.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run_id: Option<String>,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn report(out: &StageOutput) {
    println!("{}: wrote {}", out.stage, out.files.join(", "));
    if !out.summary.is_null() {
        println!("{}", serde_json::to_string_pretty(&out.summary).unwrap_or_default());
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    let out = match cmd {
        Command::Run { config, out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let rep = pipeline::run_pipeline(&cfg)?;
            for s in &rep.stages {
                println!("{}: {} files in {:.2}s", s.stage, s.files.len(), s.seconds);
            }
            println!("report: {}", cfg.out_dir.join(pipeline::RUN_REPORT).display());
            return Ok(());
        }
        Command::Ingest(common) => {
            let cfg = load(&common)?;
            pipeline::ingest(&cfg, common.input.as_deref())?
        }
        Command::Clean {
            common,
            iqr_k,
            drop_row,
            blocklist,
            outlier_columns,
        } => {
            let mut cfg = load(&common)?;
            if let Some(k) = iqr_k {
                cfg.iqr_k = k;
            }
            cfg.drop_row |= drop_row;
            if blocklist.is_some() {
                cfg.blocklist = blocklist;
            }
            if let Some(c) = outlier_columns {
                cfg.outlier_columns = c;
            }
            cfg.validate()?;
            pipeline::clean(&cfg, common.input.as_deref())?
        }
        Command::Discretize { common, thresholds } => {
            let mut cfg = load(&common)?;
            if thresholds.is_some() {
                cfg.thresholds = thresholds;
            }
            cfg.validate()?;
            pipeline::discretize(&cfg, common.input.as_deref())?
        }
        Command::Chi2 { common, x, y } => {
            let cfg = load(&common)?;
            let pair = x.as_deref().zip(y.as_deref());
            pipeline::chi2(&cfg, common.input.as_deref(), pair)?
        }
        Command::Som {
            common,
            seed,
            rows,
            cols,
            epochs,
        } => {
            let mut cfg = load(&common)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.som.rows = rows.unwrap_or(cfg.som.rows);
            cfg.som.cols = cols.unwrap_or(cfg.som.cols);
            cfg.som.epochs = epochs.unwrap_or(cfg.som.epochs);
            cfg.validate()?;
            pipeline::som(&cfg, common.input.as_deref())?
        }
        Command::Mine {
            common,
            consequent,
            min_conf,
            min_len,
            max_len,
            min_support,
            lift_floor,
            params,
        } => {
            let mut cfg = load(&common)?;
            if let Some(p) = params {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                cfg.mining = serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            }
            if !consequent.is_empty() {
                let mut classes = Vec::new();
                for c in &consequent {
                    let item = NamedItem::parse(c).map_err(|e| CliError::Config(e.to_string()))?;
                    if item.attribute != cfg.class_attribute && !classes.is_empty() {
                        return Err(CliError::Config(
                            "all --consequent values must share one attribute".into(),
                        ));
                    }
                    cfg.class_attribute = item.attribute;
                    classes.push(item.category);
                }
                cfg.mining.target_classes = Some(classes);
            }
            let m = &mut cfg.mining;
            m.min_confidence = min_conf.unwrap_or(m.min_confidence);
            m.min_len = min_len.unwrap_or(m.min_len);
            m.max_len = max_len.unwrap_or(m.max_len);
            m.min_support = min_support.unwrap_or(m.min_support);
            m.lift_floor = lift_floor.or(m.lift_floor);
            cfg.validate()?;
            pipeline::mine(&cfg, common.input.as_deref())?
        }
        Command::Render { common, run_id } => {
            let mut cfg = load(&common)?;
            if let Some(r) = run_id {
                cfg.run_id = r;
            }
            cfg.validate()?;
            pipeline::render(&cfg)?
        }
    };
    report(&out);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(m) => eprintln!("carmine: config: {m}"),
                CliError::Stage { stage, message } => eprintln!("carmine: {stage}: {message}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
