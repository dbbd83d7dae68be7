//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line with the
//! measured values next to the thresholds pinned below, then asserts.
//!
//! Tests take a shared lock so that the timing criteria never compete with
//! other criteria for cores.

use std::sync::Mutex;
use std::time::Instant;

use batch_trajopt::batch::{bench_scaling, BenchSettings};
use batch_trajopt::dynamics::{step, step_jacobians, LinearSystem};
use batch_trajopt::mpc::rho_grid;
use batch_trajopt::mpc::studies::{
    figure8_study, median, reaching_study, rho_sweep_study, Figure8Config, ReachingScenario, RhoSweepConfig,
};
use batch_trajopt::verify::{decoupled_iterations, riccati_suite, schur_kkt_suite};
use batch_trajopt::{
    batch_solve, sqp_solve, BatchItem, BatchSpec, CostSpec, DynamicsModel, ExternalForce, ProblemSpec, SolverSettings,
    SqpResult, Trajectory,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the criterion line and fails the test when `pass` is false.
fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {id:>2} [{name}]: {} — {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1–3: linear-algebra oracles

const C1_INSTANCES: usize = 100;
const C1_SEED: u64 = 2024;
const C1_TOLERANCE: f64 = 1e-6;
const C1_RUNTIME_S: f64 = 10.0;

#[test]
fn criterion_01_schur_kkt_equivalence() {
    let _g = serial();
    let t = Instant::now();
    let report = schur_kkt_suite(C1_INSTANCES, C1_SEED).unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    let worst = report.cases.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    let pass = report.cases.len() == C1_INSTANCES
        && report.all_passed()
        && report.tolerance == C1_TOLERANCE
        && worst <= C1_TOLERANCE
        && elapsed < C1_RUNTIME_S;
    verdict(
        1,
        "Schur–KKT equivalence",
        pass,
        format!(
            "{}/{} within {C1_TOLERANCE:e} (worst {worst:.2e}), {elapsed:.2}s < {C1_RUNTIME_S}s",
            report.passed, C1_INSTANCES
        ),
    );
}

const C2_INSTANCES: usize = 20;
const C2_SEED: u64 = 7;
const C2_TOLERANCE: f64 = 1e-6;
const C2_RUNTIME_S: f64 = 5.0;

#[test]
fn criterion_02_riccati_exactness() {
    let _g = serial();
    let t = Instant::now();
    let report = riccati_suite(C2_INSTANCES, C2_SEED).unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    let worst = report.cases.iter().map(|c| c.max_error).fold(0.0, f64::max);
    let full_steps = report.cases.iter().filter(|c| c.accepted && c.alpha == 1.0).count();
    let pass = report.cases.len() == C2_INSTANCES
        && report.all_passed()
        && full_steps == C2_INSTANCES
        && worst <= C2_TOLERANCE
        && elapsed < C2_RUNTIME_S;
    verdict(
        2,
        "Riccati exactness",
        pass,
        format!(
            "{}/{C2_INSTANCES} match within {C2_TOLERANCE:e} (worst {worst:.2e}), {full_steps} full steps, {elapsed:.2}s < {C2_RUNTIME_S}s",
            report.passed
        ),
    );
}

const C3_DECOUPLED_INSTANCES: usize = 20;

#[test]
fn criterion_03_preconditioner_effectiveness() {
    let _g = serial();
    let report = schur_kkt_suite(C1_INSTANCES, C1_SEED).unwrap();
    let stair = median(&report.cases.iter().map(|c| c.stair_iterations as f64).collect::<Vec<_>>());
    let ident = median(&report.cases.iter().map(|c| c.identity_iterations as f64).collect::<Vec<_>>());
    let decoupled = decoupled_iterations(C3_DECOUPLED_INSTANCES, C1_SEED).unwrap();
    let all_one = decoupled.iter().all(|&k| k == 1);
    verdict(
        3,
        "preconditioner effectiveness",
        stair < ident && all_one,
        format!(
            "median PCG iterations stair {stair} < identity {ident}; block-diagonal iterations {:?} all == 1",
            decoupled
        ),
    );
}

// ---------------------------------------------------------------------------
// 4: Jacobians

const C4_POINTS: usize = 100;
const C4_DELTA: f64 = 1e-5;
const C4_TOLERANCE: f64 = 1e-4;
const C4_DT: f64 = 0.05;

fn all_models(rng: &mut ChaCha8Rng) -> Vec<DynamicsModel> {
    let mut models: Vec<DynamicsModel> = ["double_integrator", "pendulum", "cartpole", "two_link_arm"]
        .iter()
        .map(|n| DynamicsModel::by_name(n).unwrap())
        .collect();
    let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
    let b = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
    models.push(DynamicsModel::Linear(LinearSystem::new(&a, &b).unwrap()));
    models
}

/// Largest deviation between the analytic step Jacobians and central
/// differences of the step map at one point.
fn fd_error(model: &DynamicsModel, x: &DVector<f64>, u: &DVector<f64>, f: &DVector<f64>) -> f64 {
    let (a, b) = step_jacobians(model, x, u, C4_DT, f).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += C4_DELTA;
        xm[j] -= C4_DELTA;
        let col = (step(model, &xp, u, C4_DT, f).unwrap() - step(model, &xm, u, C4_DT, f).unwrap()) / (2.0 * C4_DELTA);
        worst = worst.max((col - a.column(j)).amax());
    }
    for j in 0..u.len() {
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += C4_DELTA;
        um[j] -= C4_DELTA;
        let col = (step(model, x, &up, C4_DT, f).unwrap() - step(model, x, &um, C4_DT, f).unwrap()) / (2.0 * C4_DELTA);
        worst = worst.max((col - b.column(j)).amax());
    }
    worst
}

#[test]
fn criterion_04_jacobian_consistency() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut lines = Vec::new();
    let mut pass = true;
    for model in all_models(&mut rng) {
        let (n, m, nf) = (model.state_dim(), model.control_dim(), model.force_dim());
        let mut worst: f64 = 0.0;
        for _ in 0..C4_POINTS {
            let x = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
            let u = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
            let f = DVector::from_fn(nf, |_, _| rng.random_range(-1.0..1.0));
            worst = worst.max(fd_error(&model, &x, &u, &f));
        }
        pass &= worst <= C4_TOLERANCE;
        lines.push(format!("{} {worst:.2e}", model.name()));
    }
    verdict(
        4,
        "Jacobian consistency",
        pass,
        format!("max-abs FD error at {C4_POINTS} points (δ={C4_DELTA:e}, ≤ {C4_TOLERANCE:e}): {}", lines.join(", ")),
    );
}

// ---------------------------------------------------------------------------
// 5–6: SQP and batch semantics

const C5_SOLVES: usize = 50;
const C5_ITERATIONS: usize = 25;

/// Random nonlinear problem on one of the three nonlinear models, with a
/// random goal and a zero (infeasible) initial trajectory.
fn nonlinear_problem(rng: &mut ChaCha8Rng, index: usize, horizon: usize) -> (ProblemSpec, Trajectory) {
    let name = ["pendulum", "cartpole", "two_link_arm"][index % 3];
    let model = DynamicsModel::by_name(name).unwrap();
    let (n, m) = (model.state_dim(), model.control_dim());
    let goal = DVector::from_fn(n, |i, _| if i < n / 2 { rng.random_range(-2.5..2.5) } else { 0.0 });
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-0.3..0.3));
    let r = rng.random_range(0.01..0.2);
    let mut cost = CostSpec::tracking(DMatrix::identity(n, n), DMatrix::identity(m, m) * r, goal);
    cost.terminal_weight = DMatrix::identity(n, n) * rng.random_range(10.0..100.0);
    let force = ExternalForce::zero(model.force_dim());
    let problem = ProblemSpec::new(model, cost, horizon, 0.05, x0, force).unwrap();
    let mut init = Trajectory::zeros(n, m, horizon);
    init.states[0] = problem.start.clone();
    (problem, init)
}

fn bitwise_equal(a: &Trajectory, b: &Trajectory) -> bool {
    let same = |x: &[DVector<f64>], y: &[DVector<f64>]| {
        x.len() == y.len()
            && x.iter().zip(y).all(|(p, q)| p.len() == q.len() && p.iter().zip(q.iter()).all(|(s, t)| s.to_bits() == t.to_bits()))
    };
    same(&a.states, &b.states) && same(&a.controls, &b.controls)
}

#[test]
fn criterion_05_merit_monotonicity() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let settings = SolverSettings {
        max_iterations: C5_ITERATIONS,
        record_iterates: true,
        ..Default::default()
    };
    let (mut monotone, mut rejections, mut rejections_unchanged, mut accepted_steps) = (0, 0, 0, 0);
    for i in 0..C5_SOLVES {
        let (problem, init) = nonlinear_problem(&mut rng, i, 24);
        let res = sqp_solve(&problem, &init, &settings).unwrap();
        let merits = res.accepted_merits();
        accepted_steps += merits.len().saturating_sub(1);
        let strictly = merits.windows(2).all(|w| w[1] < w[0])
            && res.trace.iter().filter(|r| r.accepted).all(|r| r.merit < r.merit_before);
        monotone += strictly as usize;
        for (k, rec) in res.trace.iter().enumerate() {
            if !rec.accepted {
                rejections += 1;
                let before = if k == 0 { &init } else { &res.iterates[k - 1] };
                rejections_unchanged += bitwise_equal(before, &res.iterates[k]) as usize;
            }
        }
    }
    verdict(
        5,
        "merit monotonicity",
        monotone == C5_SOLVES && rejections_unchanged == rejections,
        format!(
            "{monotone}/{C5_SOLVES} solves strictly decreasing over {accepted_steps} accepted steps; \
             {rejections_unchanged}/{rejections} rejected steps left the iterate bitwise unchanged"
        ),
    );
}

const C6_BATCH: usize = 32;
const C6_RUNTIME_S: f64 = 60.0;

fn same_result(a: &SqpResult, b: &SqpResult) -> bool {
    bitwise_equal(&a.trajectory, &b.trajectory)
        && a.final_merit.to_bits() == b.final_merit.to_bits()
        && a.iterations == b.iterations
        && a.trace.len() == b.trace.len()
        && a.trace.iter().zip(&b.trace).all(|(p, q)| {
            p.merit.to_bits() == q.merit.to_bits() && p.alpha.to_bits() == q.alpha.to_bits() && p.rho.to_bits() == q.rho.to_bits()
        })
}

#[test]
fn criterion_06_batch_determinism() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let settings = SolverSettings {
        max_iterations: 15,
        ..Default::default()
    };
    // one model and size per batch; goals, weights and ρ_init vary per item
    let grid = rho_grid(C6_BATCH);
    let mut spec = BatchSpec::new(settings);
    for (i, &rho) in grid.iter().enumerate() {
        let (problem, init) = nonlinear_problem(&mut rng, 3 * i, 24);
        spec.push(BatchItem::new(problem, init).with_rho_init(rho));
    }
    let serial_results: Vec<SqpResult> = (0..spec.len())
        .map(|i| sqp_solve(&spec.items[i].problem, &spec.items[i].init, &spec.settings_for(i)).unwrap())
        .collect();
    let one = batch_solve(&spec, 1).unwrap();
    let four = batch_solve(&spec, 4).unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    let matches = |b: &batch_trajopt::BatchResult| {
        b.results
            .iter()
            .zip(&serial_results)
            .filter(|(r, s)| r.as_ref().is_ok_and(|r| same_result(r, s)))
            .count()
    };
    let (m1, m4) = (matches(&one), matches(&four));
    verdict(
        6,
        "batch determinism",
        m1 == C6_BATCH && m4 == C6_BATCH && elapsed < C6_RUNTIME_S,
        format!(
            "M={C6_BATCH}: workers=1 {m1}/{C6_BATCH}, workers=4 {m4}/{C6_BATCH} bitwise equal to the serial loop; {elapsed:.1}s < {C6_RUNTIME_S}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// 7–9: case-study trends

const C7_STRICT_FRACTION: f64 = 0.8;

#[test]
fn criterion_07_rho_sweep_trend() {
    let _g = serial();
    let cfg = RhoSweepConfig::default();
    assert_eq!((cfg.instances, cfg.iterations, cfg.batch_sizes.clone()), (25, 20, vec![1, 4, 32]));
    let rows = rho_sweep_study(&cfg).unwrap();
    let best = |i: usize, m: usize| rows.iter().find(|r| r.instance == i && r.batch_size == m).unwrap().best_merit;
    let mut ordered = 0;
    let mut strict = 0;
    for i in 0..cfg.instances {
        ordered += (best(i, 32) <= best(i, 4) && best(i, 4) <= best(i, 1)) as usize;
        strict += (best(i, 32) < best(i, 1)) as usize;
    }
    let fraction = strict as f64 / cfg.instances as f64;
    verdict(
        7,
        "ρ-sweep trend",
        ordered == cfg.instances && fraction >= C7_STRICT_FRACTION,
        format!(
            "M=32 ≤ M=4 ≤ M=1 on {ordered}/{}; M=32 < M=1 on {strict}/{} ({:.0}% ≥ {:.0}%)",
            cfg.instances,
            cfg.instances,
            100.0 * fraction,
            100.0 * C7_STRICT_FRACTION
        ),
    );
}

#[test]
fn criterion_08_fixed_force_tracking_trend() {
    let _g = serial();
    let cfg = Figure8Config::default();
    assert_eq!((cfg.seeds.len(), cfg.batch_sizes.clone()), (20, vec![1, 16]));
    let rows = figure8_study(&cfg).unwrap();
    let med = |m: usize| median(&rows.iter().filter(|r| r.batch_size == m).map(|r| r.rms_error).collect::<Vec<_>>());
    let (e1, e16) = (med(1), med(16));
    verdict(
        8,
        "fixed-force tracking trend",
        e16 < e1,
        format!("median RMS tracking error over 20 seeds: M=16 {e16:.5} < M=1 {e1:.5}"),
    );
}

const C9_MARGIN_PP: f64 = 20.0;

#[test]
fn criterion_09_reaching_trend() {
    let _g = serial();
    let scenario = ReachingScenario::standard();
    assert_eq!((scenario.seeds.len(), scenario.batch_sizes.clone()), (20, vec![1, 8, 32]));
    let rows = reaching_study(&scenario).unwrap();
    let med = |m: usize| median(&rows.iter().filter(|r| r.batch_size == m).map(|r| r.success_rate).collect::<Vec<_>>());
    let (s1, s8, s32) = (med(1), med(8), med(32));
    verdict(
        9,
        "reaching trend",
        s1 <= s8 && s8 <= s32 && s32 >= s1 + C9_MARGIN_PP,
        format!("median success M=1 {s1:.1}% ≤ M=8 {s8:.1}% ≤ M=32 {s32:.1}%, M=32 ≥ M=1 + {C9_MARGIN_PP}pp"),
    );
}

// ---------------------------------------------------------------------------
// 10: scaling

const C10_WORKERS: usize = 4;
const C10_SPEEDUP_RATIO: f64 = 0.67;
const C10_EQUAL_KNOTS_RATIO: f64 = 3.0;

fn scaling_template() -> ProblemSpec {
    let model = DynamicsModel::by_name("pendulum").unwrap();
    let mut cost = CostSpec::tracking(
        DMatrix::identity(2, 2),
        DMatrix::identity(1, 1) * 0.05,
        DVector::from_vec(vec![std::f64::consts::PI, 0.0]),
    );
    cost.terminal_weight = DMatrix::identity(2, 2) * 100.0;
    ProblemSpec::new(model, cost, 16, 0.05, DVector::zeros(2), ExternalForce::zero(1)).unwrap()
}

#[test]
fn criterion_10_scaling() {
    let _g = serial();
    let template = scaling_template();
    let bench = BenchSettings {
        repeats: 7,
        ..Default::default()
    };
    let serial_cell = bench_scaling(&template, &[32], &[32], 1, &bench).unwrap()[0];
    let parallel_cell = bench_scaling(&template, &[32], &[32], C10_WORKERS, &bench).unwrap()[0];
    let ratio = parallel_cell.median_ms / serial_cell.median_ms;

    let grid = bench_scaling(&template, &[1, 2, 4, 8], &[16, 32, 64], C10_WORKERS, &bench).unwrap();
    let mut worst_spread: f64 = 1.0;
    let mut groups = Vec::new();
    let mut knots: Vec<usize> = grid.iter().map(|c| c.total_knots()).collect();
    knots.sort_unstable();
    knots.dedup();
    for k in knots {
        let times: Vec<f64> = grid.iter().filter(|c| c.total_knots() == k).map(|c| c.median_ms).collect();
        if times.len() > 1 {
            let spread = times.iter().copied().fold(f64::MIN, f64::max) / times.iter().copied().fold(f64::MAX, f64::min);
            worst_spread = worst_spread.max(spread);
            groups.push(format!("N·M={k}: {spread:.2}×"));
        }
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    verdict(
        10,
        "scaling (environment-sensitive)",
        ratio <= C10_SPEEDUP_RATIO && worst_spread < C10_EQUAL_KNOTS_RATIO,
        format!(
            "M=32 with {C10_WORKERS} workers {:.2} ms vs serial {:.2} ms (ratio {ratio:.2} ≤ {C10_SPEEDUP_RATIO}); \
             equal-knot spread {} (< {C10_EQUAL_KNOTS_RATIO}×); host cores {cores}",
            parallel_cell.median_ms,
            serial_cell.median_ms,
            groups.join(", ")
        ),
    );
}
