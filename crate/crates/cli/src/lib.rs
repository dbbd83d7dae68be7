//! Runs benchmarks, case studies and oracle suites from configuration
//! files, writing one table per file, a JSON report and SVG plots.
//!
//! Exit codes: [`EXIT_OK`] on success, [`EXIT_CONFIG`] for configuration
//! problems (nothing is run), [`EXIT_SOLVER`] when a solve failed (the
//! report is still written and records the failure).

pub mod config;
pub mod experiments;
pub mod plot;
pub mod table;

use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use experiments::{run_experiment, ExperimentOutput};
pub use plot::{emit_plot, PlotKind, PlotOutcome};
pub use table::{Cell, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Version of the CSV column schemas documented in the README.
pub const TABLE_SCHEMA_VERSION: u32 = 1;

pub const REPORT_FILE: &str = "report.json";

/// Serialization of result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TableFormat {
    #[default]
    Csv,
    Json,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
        }
    }
}

/// Command-line overrides of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: TableFormat,
}

#[derive(Debug, Clone, Serialize)]
pub struct HostInfo {
    pub os: &'static str,
    pub arch: &'static str,
    pub available_parallelism: usize,
}

impl HostInfo {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            available_parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub cli: &'static str,
    pub library: &'static str,
    pub table_schema: u32,
}

/// The JSON report written next to the tables.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub experiment: &'static str,
    pub versions: Versions,
    pub host: HostInfo,
    /// The configuration as run, with command-line overrides applied.
    pub config: serde_json::Value,
    pub summary: serde_json::Value,
    pub tables: Vec<table::RenderedTable>,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
    pub wall_time_s: f64,
    pub exit_code: i32,
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub out_dir: Option<PathBuf>,
    pub report: Option<Report>,
    /// Set when the run stopped before executing (configuration error).
    pub message: Option<String>,
}

impl RunOutcome {
    fn config_error(e: ConfigError) -> Self {
        Self {
            exit_code: EXIT_CONFIG,
            out_dir: None,
            report: None,
            message: Some(e.0),
        }
    }
}

/// Loads the configuration at `path`, applies `opts` and runs it.
pub fn run(path: &Path, opts: &RunOptions) -> RunOutcome {
    match ExperimentConfig::load(path) {
        Ok(cfg) => run_config(cfg, opts),
        Err(e) => RunOutcome::config_error(e),
    }
}

/// Runs an already parsed configuration.
pub fn run_config(mut cfg: ExperimentConfig, opts: &RunOptions) -> RunOutcome {
    if let Some(w) = opts.workers {
        cfg.workers = Some(w);
    }
    if let Some(s) = opts.seed {
        cfg.seed = Some(s);
    }
    if let Some(out) = &opts.out {
        cfg.output_dir = Some(out.to_string_lossy().into_owned());
    }
    if let Err(e) = cfg.validate() {
        return RunOutcome::config_error(e);
    }
    let out_dir = PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| format!("results/{}", cfg.kind.name())));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        return RunOutcome::config_error(ConfigError(format!(
            "cannot create output directory {}: {e}",
            out_dir.display()
        )));
    }
    let start = std::time::Instant::now();
    let output = match run_experiment(&cfg) {
        Ok(o) => o,
        Err(e) => return RunOutcome::config_error(e),
    };
    let wall_time_s = start.elapsed().as_secs_f64();
    match write_outputs(&cfg, &output, &out_dir, opts.format, wall_time_s) {
        Ok(report) => RunOutcome {
            exit_code: report.exit_code,
            out_dir: Some(out_dir),
            report: Some(report),
            message: None,
        },
        Err(e) => RunOutcome::config_error(ConfigError(format!("writing results to {}: {e}", out_dir.display()))),
    }
}

fn write_outputs(
    cfg: &ExperimentConfig,
    output: &ExperimentOutput,
    out_dir: &Path,
    format: TableFormat,
    wall_time_s: f64,
) -> std::io::Result<Report> {
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    let mut errors = output.errors.clone();
    for t in &output.tables {
        let name = format!("{}.{}", t.name, format.extension());
        let body = match format {
            TableFormat::Csv => t.to_csv(),
            TableFormat::Json => t.to_json(),
        };
        std::fs::write(out_dir.join(&name), body)?;
        files.push(name);
    }
    if cfg.plots() {
        for p in &output.plots {
            let Some(table) = output.tables.iter().find(|t| t.name == p.table) else {
                warnings.push(format!("plot {} refers to a missing table {}", p.file_stem, p.table));
                continue;
            };
            let name = format!("{}.svg", p.file_stem);
            match emit_plot(table, &p.kind, &p.title, &out_dir.join(&name)) {
                Ok(PlotOutcome::Written(_)) => files.push(name),
                Ok(PlotOutcome::Skipped(w)) => warnings.push(w),
                Err(plot::PlotError::Io(e)) => return Err(e),
                Err(e) => errors.push(e.to_string()),
            }
        }
    }
    files.push(REPORT_FILE.to_string());
    let exit_code = if errors.is_empty() { EXIT_OK } else { EXIT_SOLVER };
    let report = Report {
        experiment: cfg.kind.name(),
        versions: Versions {
            cli: env!("CARGO_PKG_VERSION"),
            library: batch_trajopt::VERSION,
            table_schema: TABLE_SCHEMA_VERSION,
        },
        host: HostInfo::current(),
        config: cfg.to_json(),
        summary: output.summary.clone(),
        tables: output.tables.iter().map(Table::rendered).collect(),
        files,
        warnings,
        errors,
        wall_time_s,
        exit_code,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("reports serialize");
    text.push('\n');
    std::fs::write(out_dir.join(REPORT_FILE), text)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recorded_errors_give_the_solver_exit_code_and_a_report() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::new(ExperimentKind::OracleSuite);
        let mut table = Table::new("t", &["x", "y"]);
        table.push(vec![Cell::from(1usize), Cell::from(2.0)]);
        let output = ExperimentOutput {
            tables: vec![table],
            plots: vec![experiments::PlotRequest {
                table: "missing".into(),
                kind: PlotKind::line("x", "y", None, false),
                title: String::new(),
                file_stem: "p".into(),
            }],
            summary: serde_json::json!({}),
            errors: vec!["solve 3 diverged".into()],
        };
        let report = write_outputs(&cfg, &output, dir.path(), TableFormat::Csv, 0.0).unwrap();
        assert_eq!(report.exit_code, EXIT_SOLVER);
        assert_eq!(report.files, vec!["t.csv".to_string(), REPORT_FILE.to_string()]);
        assert_eq!(report.warnings.len(), 1);
        let text = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["errors"][0], "solve 3 diverged");
        assert_eq!(v["exit_code"], EXIT_SOLVER);
    }

    #[test]
    fn empty_tables_warn_instead_of_plotting() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::new(ExperimentKind::Benchmark);
        let output = ExperimentOutput {
            tables: vec![Table::new("t", &["x", "y"])],
            plots: vec![experiments::PlotRequest {
                table: "t".into(),
                kind: PlotKind::line("x", "y", None, false),
                title: String::new(),
                file_stem: "p".into(),
            }],
            summary: serde_json::json!({}),
            errors: Vec::new(),
        };
        let report = write_outputs(&cfg, &output, dir.path(), TableFormat::Csv, 0.0).unwrap();
        assert_eq!(report.exit_code, EXIT_OK);
        assert_eq!(report.warnings.len(), 1);
        assert!(!dir.path().join("p.svg").exists());
    }
}
