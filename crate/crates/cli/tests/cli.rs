//! End-to-end runs of the command-line binary and library entry point.

use std::path::{Path, PathBuf};
use std::process::Command;

use batch_trajopt_cli::{run, ExperimentConfig, RunOptions, TableFormat, EXIT_CONFIG, EXIT_OK, REPORT_FILE};

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_batch-trajopt"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn read_report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(REPORT_FILE)).unwrap()).unwrap()
}

#[test]
fn missing_config_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = binary()
        .args(["run", dir.path().join("absent.json").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
}

#[test]
fn invalid_configs_exit_with_config_error_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    for (i, body) in [
        r#"{"kind": "benchmark", "unknown_key": 1}"#,
        r#"{"kind": "oracle_suite", "steps": 3}"#,
        r#"{"kind": "benchmark", "batch_sizes": [0]}"#,
        r#"{"kind": "nonsense"}"#,
    ]
    .iter()
    .enumerate()
    {
        let cfg = write_config(dir.path(), &format!("bad{i}.json"), body);
        let out = binary()
            .args(["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(EXIT_CONFIG), "{body}");
        assert!(!out_dir.join(REPORT_FILE).exists());
    }
}

#[test]
fn bad_flag_values_exit_with_config_error() {
    let out = binary().args(["run", "x.json", "--format", "xml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn benchmark_csv_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bench.json",
        r#"{"kind": "benchmark", "model": "pendulum", "batch_sizes": [1, 2, 4], "horizons": [16],
            "iterations": 2, "repeats": 2, "warmup": 0}"#,
    );
    let out_dir = dir.path().join("out");
    let out = binary()
        .args(["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--workers", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("benchmark.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "M,N,median_ms,p90_ms");
    assert_eq!(lines.len(), 4);
    for (line, m) in lines[1..].iter().zip(["1", "2", "4"]) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[0], m);
        assert_eq!(cells[1], "16");
        for v in &cells[2..] {
            // fixed six-digit precision
            assert_eq!(v.split('.').nth(1).map(str::len), Some(6), "{v}");
            assert!(v.parse::<f64>().unwrap() > 0.0);
        }
    }
    assert!(out_dir.join("benchmark_heatmap.svg").exists());
    assert!(out_dir.join("benchmark_line.svg").exists());
    let report = read_report(&out_dir);
    assert_eq!(report["config"]["workers"], 2);
    assert_eq!(report["exit_code"], 0);
}

#[test]
fn case2_tables_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "case2.json",
        r#"{"kind": "case2_fixed_force", "seed": 3, "seeds": 1, "batch_sizes": [1, 4], "steps": 15}"#,
    );
    let mut tables = Vec::new();
    for run_dir in ["a", "b"] {
        let out_dir = dir.path().join(run_dir);
        let out = binary()
            .args(["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&out.stderr));
        tables.push((
            std::fs::read(out_dir.join("case2_fixed_force.csv")).unwrap(),
            std::fs::read(out_dir.join("case2_summary.csv")).unwrap(),
        ));
    }
    assert_eq!(tables[0], tables[1]);
    let csv = String::from_utf8(tables[0].0.clone()).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("seed,M,rms_error,joint_velocity,final_force_error,failures\n3,1,"));
}

#[test]
fn oracle_suite_reports_pass_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "oracle.json",
        r#"{"kind": "oracle_suite", "instances": 16, "riccati_instances": 6, "seed": 11}"#,
    );
    let out_dir = dir.path().join("out");
    let outcome = run(
        &cfg,
        &RunOptions {
            out: Some(out_dir.clone()),
            ..Default::default()
        },
    );
    assert_eq!(outcome.exit_code, EXIT_OK, "{:?}", outcome.report.map(|r| r.errors));
    let csv = std::fs::read_to_string(out_dir.join("oracle_suite.csv")).unwrap();
    assert_eq!(
        csv,
        "suite,tolerance,cases,passed,failed\nschur_kkt,0.000001,16,16,0\nriccati,0.000001,6,6,0\n"
    );
    let report = read_report(&out_dir);
    assert_eq!(report["tables"][0]["rows"][1][3], "6");
    assert!(report["summary"]["median_pcg_iterations_stair"].as_f64().unwrap()
        < report["summary"]["median_pcg_iterations_identity"].as_f64().unwrap());
}

#[test]
fn report_config_round_trips_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "oracle.json",
        r#"{"kind": "oracle_suite", "instances": 4, "riccati_instances": 2, "plots": false}"#,
    );
    let out_dir = dir.path().join("out");
    let outcome = run(
        &cfg,
        &RunOptions {
            seed: Some(9),
            workers: Some(3),
            out: Some(out_dir.clone()),
            format: TableFormat::Json,
        },
    );
    assert_eq!(outcome.exit_code, EXIT_OK);
    let report = read_report(&out_dir);
    let echoed: ExperimentConfig = ExperimentConfig::parse(&report["config"].to_string()).unwrap();
    assert_eq!(echoed.seed, Some(9));
    assert_eq!(echoed.workers, Some(3));
    assert_eq!(echoed.instances, Some(4));
    // rerunning the echo reproduces the same tables
    let again = dir.path().join("again");
    let outcome = batch_trajopt_cli::run_config(
        echoed,
        &RunOptions {
            out: Some(again.clone()),
            format: TableFormat::Json,
            ..Default::default()
        },
    );
    assert_eq!(outcome.exit_code, EXIT_OK);
    assert_eq!(
        std::fs::read(out_dir.join("oracle_suite.json")).unwrap(),
        std::fs::read(again.join("oracle_suite.json")).unwrap()
    );
    assert_eq!(read_report(&again)["tables"], report["tables"]);
    assert!(!out_dir.join("oracle_suite.csv").exists());
}
