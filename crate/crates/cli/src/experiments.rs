//! The experiment kinds: each turns a validated configuration into result
//! tables, plot requests and a summary.

use batch_trajopt::batch::{bench_scaling, BenchSettings};
use batch_trajopt::mpc::studies::{
    figure8_study, median, reaching_study, rho_sweep_study, Figure8Config, ReachingScenario, RhoSweepConfig,
};
use batch_trajopt::verify::{decoupled_iterations, riccati_suite, schur_kkt_suite};
use batch_trajopt::{CostSpec, DynamicsModel, ExternalForce, ProblemSpec};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::config::{ConfigError, ExperimentConfig, ExperimentKind};
use crate::plot::PlotKind;
use crate::table::Table;

/// A plot to draw from one of the experiment's tables.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRequest {
    pub table: String,
    pub kind: PlotKind,
    pub title: String,
    pub file_stem: String,
}

/// Everything an experiment produced.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub tables: Vec<Table>,
    pub plots: Vec<PlotRequest>,
    pub summary: serde_json::Value,
    /// Solver failures; any entry makes the run exit with the failure code.
    pub errors: Vec<String>,
}

impl ExperimentOutput {
    fn failed(message: String) -> Self {
        Self {
            summary: json!({}),
            errors: vec![message],
            ..Default::default()
        }
    }
}

/// Runs the configured experiment. Configuration problems surface as
/// [`ConfigError`]; solver problems are recorded in the output.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ConfigError> {
    match cfg.kind {
        ExperimentKind::Benchmark => benchmark(cfg),
        ExperimentKind::Case1Rho => case1(cfg),
        ExperimentKind::Case2FixedForce => case2(cfg),
        ExperimentKind::Case3Reaching => case3(cfg),
        ExperimentKind::OracleSuite => oracle(cfg),
    }
}

fn batch_values(cfg: &ExperimentConfig, default: &[usize]) -> Vec<usize> {
    cfg.batch_sizes.clone().unwrap_or_else(|| default.to_vec())
}

fn config_error(e: batch_trajopt::Error) -> ConfigError {
    ConfigError(e.to_string())
}

/// Benchmark problem for a named model: drive it from rest at the origin to
/// a fixed nontrivial goal.
pub fn benchmark_template(model: &str, horizon: usize, dt: f64) -> Result<ProblemSpec, ConfigError> {
    let dynamics =
        DynamicsModel::by_name(model).ok_or_else(|| ConfigError(format!("unknown model `{model}`")))?;
    let n = dynamics.state_dim();
    let m = dynamics.control_dim();
    let goal = match &dynamics {
        DynamicsModel::Pendulum(_) => DVector::from_vec(vec![std::f64::consts::PI, 0.0]),
        DynamicsModel::CartPole(_) => DVector::from_vec(vec![0.0, std::f64::consts::PI, 0.0, 0.0]),
        DynamicsModel::TwoLinkArm(_) => DVector::from_vec(vec![0.8, 0.6, 0.0, 0.0]),
        _ => DVector::from_fn(n, |i, _| if i < n / 2 { 1.0 } else { 0.0 }),
    };
    let mut cost = CostSpec::tracking(DMatrix::identity(n, n), DMatrix::identity(m, m) * 0.05, goal);
    cost.terminal_weight = DMatrix::identity(n, n) * 100.0;
    let force = ExternalForce::zero(dynamics.force_dim());
    ProblemSpec::new(dynamics, cost, horizon, dt, DVector::zeros(n), force).map_err(config_error)
}

fn benchmark(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ConfigError> {
    let model = cfg.model.as_deref().unwrap_or("pendulum");
    let horizons = cfg.horizons.clone().unwrap_or_else(|| vec![16, 32, 64]);
    let batch_sizes = batch_values(cfg, &[1, 2, 4, 8]);
    let defaults = BenchSettings::default();
    let mut solver = cfg.solver_settings(defaults.solver)?;
    if let Some(it) = cfg.iterations {
        solver.max_iterations = it;
    }
    let bench = BenchSettings {
        solver,
        repeats: cfg.repeats.unwrap_or(defaults.repeats),
        warmup: cfg.warmup.unwrap_or(defaults.warmup),
    };
    let template = benchmark_template(model, horizons[0], cfg.dt.unwrap_or(0.05))?;
    let cells = match bench_scaling(&template, &batch_sizes, &horizons, cfg.workers(), &bench) {
        Ok(c) => c,
        Err(e) => return Ok(ExperimentOutput::failed(format!("benchmark: {e}"))),
    };
    let mut table = Table::new("benchmark", &["M", "N", "median_ms", "p90_ms"]);
    for c in &cells {
        table.push(vec![c.batch_size.into(), c.horizon.into(), c.median_ms.into(), c.p90_ms.into()]);
    }
    let summary = json!({
        "model": model,
        "workers": cfg.workers(),
        "iterations_per_solve": bench.solver.max_iterations,
        "repeats": bench.repeats,
        "warmup": bench.warmup,
    });
    Ok(ExperimentOutput {
        plots: vec![
            PlotRequest {
                table: "benchmark".into(),
                kind: PlotKind::heatmap("M", "N", "median_ms"),
                title: format!("median wall time (ms), {model}"),
                file_stem: "benchmark_heatmap".into(),
            },
            PlotRequest {
                table: "benchmark".into(),
                kind: PlotKind::line("N", "median_ms", Some("M"), false),
                title: format!("median wall time vs horizon, {model}"),
                file_stem: "benchmark_line".into(),
            },
        ],
        tables: vec![table],
        summary,
        errors: Vec::new(),
    })
}

fn case1(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ConfigError> {
    let d = RhoSweepConfig::default();
    let sweep = RhoSweepConfig {
        instances: cfg.instances.unwrap_or(d.instances),
        batch_sizes: batch_values(cfg, &d.batch_sizes),
        iterations: cfg.iterations.unwrap_or(d.iterations),
        horizon: cfg.horizon.unwrap_or(d.horizon),
        dt: cfg.dt.unwrap_or(d.dt),
        seed: cfg.seed(),
        workers: cfg.workers(),
        merit_weight: cfg.merit_weight.unwrap_or(d.merit_weight),
    };
    let rows = match rho_sweep_study(&sweep) {
        Ok(r) => r,
        Err(e) => return Ok(ExperimentOutput::failed(format!("case1_rho: {e}"))),
    };
    let mut table = Table::new("case1_rho", &["instance", "M", "best_merit", "best_rho_init"]);
    for r in &rows {
        table.push(vec![r.instance.into(), r.batch_size.into(), r.best_merit.into(), r.best_rho_init.into()]);
    }
    let mut curves = Table::new("case1_curves", &["M", "iteration", "median_merit"]);
    let mut sizes = sweep.batch_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut medians = serde_json::Map::new();
    for &m in &sizes {
        let of_m: Vec<_> = rows.iter().filter(|r| r.batch_size == m).collect();
        for it in 0..sweep.iterations {
            let v: Vec<f64> = of_m.iter().map(|r| r.merit_curve[it]).collect();
            curves.push(vec![m.into(), (it + 1).into(), median(&v).into()]);
        }
        let best: Vec<f64> = of_m.iter().map(|r| r.best_merit).collect();
        medians.insert(m.to_string(), json!(median(&best)));
    }
    // per instance: larger batches never end worse; the largest beats the smallest
    let best = |i: usize, m: usize| {
        rows.iter()
            .find(|r| r.instance == i && r.batch_size == m)
            .map_or(f64::NAN, |r| r.best_merit)
    };
    let mut ordered = 0;
    let mut strict = 0;
    for i in 0..sweep.instances {
        if sizes.windows(2).all(|w| best(i, w[1]) <= best(i, w[0])) {
            ordered += 1;
        }
        if best(i, *sizes.last().unwrap()) < best(i, sizes[0]) {
            strict += 1;
        }
    }
    let summary = json!({
        "instances": sweep.instances,
        "median_best_merit": medians,
        "ordered_instances": ordered,
        "largest_beats_smallest": strict,
        "largest_beats_smallest_fraction": strict as f64 / sweep.instances as f64,
    });
    Ok(ExperimentOutput {
        tables: vec![table, curves],
        plots: vec![PlotRequest {
            table: "case1_curves".into(),
            kind: PlotKind::line("iteration", "median_merit", Some("M"), true),
            title: "median best-of-batch merit".into(),
            file_stem: "case1_curves".into(),
        }],
        summary,
        errors: Vec::new(),
    })
}

/// `seed, seed + 1, …` when either key is given, else `default`.
fn seed_list(cfg: &ExperimentConfig, default: &[u64]) -> Vec<u64> {
    if cfg.seed.is_none() && cfg.seeds.is_none() {
        return default.to_vec();
    }
    let count = cfg.seeds.unwrap_or(default.len()) as u64;
    (cfg.seed()..cfg.seed() + count).collect()
}

fn case2(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ConfigError> {
    let d = Figure8Config::default();
    let mut mpc = d.mpc.clone();
    mpc.settings = cfg.solver_settings(mpc.settings)?;
    let study = Figure8Config {
        seeds: seed_list(cfg, &d.seeds),
        batch_sizes: batch_values(cfg, &d.batch_sizes),
        horizon: cfg.horizon.unwrap_or(d.horizon),
        dt: cfg.dt.unwrap_or(d.dt),
        steps: cfg.steps.unwrap_or(d.steps),
        radius: cfg.radius.unwrap_or(d.radius),
        workers: cfg.workers(),
        mpc,
        ..d
    };
    let rows = match figure8_study(&study) {
        Ok(r) => r,
        Err(e) => return Ok(ExperimentOutput::failed(format!("case2_fixed_force: {e}"))),
    };
    let mut table = Table::new(
        "case2_fixed_force",
        &["seed", "M", "rms_error", "joint_velocity", "final_force_error", "failures"],
    );
    for r in &rows {
        table.push(vec![
            r.seed.into(),
            r.batch_size.into(),
            r.rms_error.into(),
            r.joint_velocity.into(),
            r.final_force_error.into(),
            r.failures.into(),
        ]);
    }
    let mut summary_table = Table::new(
        "case2_summary",
        &["M", "median_rms_error", "median_joint_velocity", "median_final_force_error", "failures"],
    );
    let mut failures = 0;
    for &m in &study.batch_sizes {
        let of_m: Vec<_> = rows.iter().filter(|r| r.batch_size == m).collect();
        let col = |f: fn(&&batch_trajopt::mpc::studies::Figure8Row) -> f64| median(&of_m.iter().map(f).collect::<Vec<_>>());
        let fails: usize = of_m.iter().map(|r| r.failures).sum();
        failures += fails;
        summary_table.push(vec![
            m.into(),
            col(|r| r.rms_error).into(),
            col(|r| r.joint_velocity).into(),
            col(|r| r.final_force_error).into(),
            fails.into(),
        ]);
    }
    let errors = if failures > 0 {
        vec![format!("case2_fixed_force: {failures} controller solves failed")]
    } else {
        Vec::new()
    };
    Ok(ExperimentOutput {
        summary: json!({ "seeds": study.seeds.len(), "steps": study.steps, "solver_failures": failures }),
        tables: vec![table, summary_table],
        plots: vec![PlotRequest {
            table: "case2_summary".into(),
            kind: PlotKind::line("M", "median_rms_error", None, false),
            title: "median RMS tracking error vs hypotheses".into(),
            file_stem: "case2_summary".into(),
        }],
        errors,
    })
}

fn case3(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ConfigError> {
    let mut scenario = cfg.scenario.clone().unwrap_or_else(ReachingScenario::standard);
    scenario.seeds = seed_list(cfg, &scenario.seeds);
    if let Some(b) = &cfg.batch_sizes {
        scenario.batch_sizes = b.clone();
    }
    if let Some(h) = cfg.horizon {
        scenario.horizon = h;
    }
    if let Some(r) = cfg.radius {
        scenario.radius = r;
    }
    if let Some(w) = cfg.workers {
        scenario.workers = w;
    }
    scenario.mpc.settings = cfg.solver_settings(scenario.mpc.settings)?;
    scenario.validate().map_err(config_error)?;
    let rows = match reaching_study(&scenario) {
        Ok(r) => r,
        Err(e) => return Ok(ExperimentOutput::failed(format!("case3_reaching: {e}"))),
    };
    let mut table = Table::new(
        "case3_reaching",
        &["seed", "M", "targets", "reached", "success_rate", "mean_completion_time", "failures"],
    );
    for r in &rows {
        table.push(vec![
            r.seed.into(),
            r.batch_size.into(),
            r.targets.into(),
            r.reached.into(),
            r.success_rate.into(),
            r.mean_completion_time.into(),
            r.failures.into(),
        ]);
    }
    let mut summary_table = Table::new(
        "case3_summary",
        &["M", "median_success_rate", "median_completion_time", "failures"],
    );
    let mut failures = 0;
    for &m in &scenario.batch_sizes {
        let of_m: Vec<_> = rows.iter().filter(|r| r.batch_size == m).collect();
        let fails: usize = of_m.iter().map(|r| r.failures).sum();
        failures += fails;
        summary_table.push(vec![
            m.into(),
            median(&of_m.iter().map(|r| r.success_rate).collect::<Vec<_>>()).into(),
            median(&of_m.iter().map(|r| r.mean_completion_time).collect::<Vec<_>>()).into(),
            fails.into(),
        ]);
    }
    let errors = if failures > 0 {
        vec![format!("case3_reaching: {failures} controller solves failed")]
    } else {
        Vec::new()
    };
    Ok(ExperimentOutput {
        summary: json!({ "seeds": scenario.seeds.len(), "targets": scenario.targets, "solver_failures": failures }),
        tables: vec![table, summary_table],
        plots: vec![PlotRequest {
            table: "case3_summary".into(),
            kind: PlotKind::line("M", "median_success_rate", None, false),
            title: "median success rate (%) vs hypotheses".into(),
            file_stem: "case3_summary".into(),
        }],
        errors,
    })
}

fn oracle(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ConfigError> {
    let seed = cfg.seed();
    let instances = cfg.instances.unwrap_or(100);
    let riccati_instances = cfg.riccati_instances.unwrap_or(20);
    let mut table = Table::new("oracle_suite", &["suite", "tolerance", "cases", "passed", "failed"]);
    let mut errors = Vec::new();
    let mut summary = serde_json::Map::new();
    match schur_kkt_suite(instances, seed) {
        Ok(r) => {
            table.push(vec![r.name.into(), r.tolerance.into(), r.cases.len().into(), r.passed.into(), r.failed.into()]);
            let stair: Vec<f64> = r.cases.iter().map(|c| c.stair_iterations as f64).collect();
            let ident: Vec<f64> = r.cases.iter().map(|c| c.identity_iterations as f64).collect();
            let worst = r.cases.iter().map(|c| c.relative_error).fold(0.0, f64::max);
            summary.insert("schur_kkt_max_relative_error".into(), json!(worst));
            summary.insert("median_pcg_iterations_stair".into(), json!(median(&stair)));
            summary.insert("median_pcg_iterations_identity".into(), json!(median(&ident)));
            if r.failed > 0 {
                errors.push(format!("schur_kkt: {} of {} cases failed", r.failed, r.cases.len()));
            }
        }
        Err(e) => errors.push(format!("schur_kkt: {e}")),
    }
    match riccati_suite(riccati_instances, seed) {
        Ok(r) => {
            table.push(vec![r.name.into(), r.tolerance.into(), r.cases.len().into(), r.passed.into(), r.failed.into()]);
            let worst = r.cases.iter().map(|c| c.max_error).fold(0.0, f64::max);
            summary.insert("riccati_max_error".into(), json!(worst));
            if r.failed > 0 {
                errors.push(format!("riccati: {} of {} cases failed", r.failed, r.cases.len()));
            }
        }
        Err(e) => errors.push(format!("riccati: {e}")),
    }
    match decoupled_iterations(8, seed) {
        Ok(its) => {
            summary.insert("decoupled_pcg_iterations".into(), json!(its));
        }
        Err(e) => errors.push(format!("decoupled: {e}")),
    }
    Ok(ExperimentOutput {
        tables: vec![table],
        plots: Vec::new(),
        summary: serde_json::Value::Object(summary),
        errors,
    })
}
