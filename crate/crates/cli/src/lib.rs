//! Configuration and orchestration behind the `wfsim` binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::json;
use wf_simplex::estimates::{aggregate_reports, Table};
use wf_simplex::multiplier::MultiplierSpec;
use wf_simplex::suite::{self, guarded, Outcome, SuiteParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Spectrum,
    FaceCheck,
    ChartCheck,
    SectorScan,
    SmoothingScan,
    ParametrixCheck,
    DefectRates,
    McCompare,
    GradientScan,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Spectrum => "spectrum",
            Self::FaceCheck => "face-check",
            Self::ChartCheck => "chart-check",
            Self::SectorScan => "sector-scan",
            Self::SmoothingScan => "smoothing-scan",
            Self::ParametrixCheck => "parametrix-check",
            Self::DefectRates => "defect-rates",
            Self::McCompare => "mc-compare",
            Self::GradientScan => "gradient-scan",
            Self::All => "all",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wfsim", about = "Wright-Fisher simplex verification experiments")]
pub struct Flags {
    #[arg(long, value_enum)]
    pub command: Option<Command>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<u32>,
    /// Largest polynomial degree.
    #[arg(long = "N")]
    pub max_degree: Option<u32>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Contents of a config file; every key optional, unknown keys rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub command: Option<Command>,
    pub d: Option<usize>,
    pub n: Option<u32>,
    #[serde(rename = "N")]
    pub max_degree: Option<u32>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub population: Option<u32>,
    pub replicates: Option<usize>,
    pub multiplier: Option<MultiplierSpec>,
    pub lambdas: Option<Vec<[f64; 2]>>,
    pub times: Option<Vec<f64>>,
}

/// Fully resolved and validated run configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub out: PathBuf,
    #[serde(flatten)]
    pub params: SuiteParams,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn parse_file(text: &str) -> Result<FileConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError(format!("malformed config: {e}")))
}

/// Merges flags over the file over the defaults and validates the result.
pub fn resolve(flags: &Flags, file: FileConfig) -> Result<RunConfig, ConfigError> {
    let mut p = SuiteParams::default();
    macro_rules! layer {
        ($field:ident) => {
            if let Some(v) = file.$field {
                p.$field = v;
            }
        };
    }
    layer!(d);
    layer!(n);
    layer!(max_degree);
    layer!(delta);
    layer!(seed);
    layer!(population);
    layer!(replicates);
    layer!(multiplier);
    layer!(lambdas);
    layer!(times);
    if let Some(v) = flags.d {
        p.d = v;
    }
    if let Some(v) = flags.n {
        p.n = v;
    }
    if let Some(v) = flags.max_degree {
        p.max_degree = v;
    }
    if let Some(v) = flags.delta {
        p.delta = v;
    }
    if let Some(v) = flags.seed {
        p.seed = v;
    }
    p.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(RunConfig {
        command: flags.command.or(file.command).unwrap_or(Command::All),
        out: flags.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
        params: p,
    })
}

pub fn parse_config(flags: &Flags) -> Result<RunConfig, ConfigError> {
    let file = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
            parse_file(&text)?
        }
        None => FileConfig::default(),
    };
    resolve(flags, file)
}

/// Runs the experiments mapped to the configured command.
pub fn execute(cfg: &RunConfig) -> Vec<Outcome> {
    let p = &cfg.params;
    let d = p.d;
    let extra: Vec<Complex64> = p.lambdas.iter().map(|l| Complex64::new(l[0], l[1])).collect();
    match cfg.command {
        Command::Spectrum => vec![guarded("spectrum", "exact", || suite::spectrum(&[d], p.max_degree))],
        Command::FaceCheck => vec![guarded("face-commutation", "exact", || suite::face_check(&[d], 5, p.n))],
        Command::ChartCheck => vec![guarded("chart-conjugation", "exact", || {
            suite::chart_check(&[d.max(2)], p.delta, 50, p.seed)
        })],
        Command::SectorScan => vec![guarded("sector-resolvent", "numerical", || suite::sector(d, p.n, &extra, p.seed))],
        Command::SmoothingScan => vec![guarded("smoothing-rate", "rate", || suite::smoothing(&[d], p.n, &p.times))],
        Command::ParametrixCheck => vec![guarded("parametrix", "numerical", || {
            suite::parametrix(d.max(2), p.n, p.delta, p.seed)
        })],
        Command::DefectRates => vec![guarded("multiplier-resolvent", "numerical", || {
            suite::multiplier(p.n, &p.multiplier, p.seed)
        })],
        Command::McCompare => vec![guarded("mc-compare", "stochastic", || {
            suite::mc_compare(&[d], p.population, p.replicates, p.seed)
        })],
        Command::GradientScan => vec![
            guarded("resolvent-gradient-rate", "rate", || suite::gradient_rates(d, p.n)),
            guarded("gradient-inequality", "numerical", || suite::gradient_inequality(p.n as usize, 1.0, p.seed)),
        ],
        Command::All => suite::acceptance_suite(p),
    }
}

fn stamp() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string()
}

fn write_table(path: &Path, config: &str, table: &Table) -> anyhow::Result<()> {
    let mut buf = format!("# config: {config}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&table.headers)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

/// Paths of the written artifacts.
#[derive(Debug)]
pub struct Artifacts {
    pub json: PathBuf,
    pub csv: PathBuf,
    pub tables: Vec<PathBuf>,
    pub pass: bool,
}

/// Writes `<command>-<stamp>.json` (config, summary, per-report data), the
/// check table `<command>-<stamp>.csv` and one CSV per scan table.
pub fn write_artifacts(cfg: &RunConfig, outcomes: Vec<Outcome>) -> anyhow::Result<Artifacts> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let base = format!("{}-{}", cfg.command.name(), stamp());
    let config = serde_json::to_string(cfg)?;
    let mut checks = Table {
        headers: ["report", "category", "check", "value", "lower", "upper", "pass"].iter().map(|s| s.to_string()).collect(),
        rows: Vec::new(),
    };
    let mut tables = Vec::new();
    let mut data = serde_json::Map::new();
    for o in &outcomes {
        for c in &o.report.checks {
            let f = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
            checks.rows.push(vec![
                o.report.id.clone(),
                o.report.category.clone(),
                c.name.clone(),
                format!("{:.12e}", c.value),
                f(c.lower),
                f(c.upper),
                c.pass.to_string(),
            ]);
        }
        for (name, t) in &o.tables {
            let path = cfg.out.join(format!("{base}.{name}.csv"));
            write_table(&path, &config, t)?;
            tables.push(path);
        }
        if !o.data.is_null() {
            data.insert(o.report.id.clone(), o.data.clone());
        }
    }
    let csv = cfg.out.join(format!("{base}.csv"));
    write_table(&csv, &config, &checks)?;
    let summary = aggregate_reports(outcomes.into_iter().map(|o| o.report).collect());
    let pass = summary.pass;
    let doc = json!({ "config": cfg, "summary": summary, "data": data });
    let json_path = cfg.out.join(format!("{base}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&doc)? + "\n").with_context(|| format!("writing {}", json_path.display()))?;
    Ok(Artifacts {
        json: json_path,
        csv,
        tables,
        pass,
    })
}
