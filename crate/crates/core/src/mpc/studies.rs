//! Case-study protocols: ρ-sweep batches on open-loop reaching, figure-8
//! tracking under a constant unmodeled tip force, and sequential reaching
//! under a swinging-payload disturbance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rho_grid, run_closed_loop, MpcConfig, MpcController, MpcMode, ReferencePath};
use crate::batch::{BatchEngine, BatchItem, BatchSpec};
use crate::dynamics::{simulate_plant, DecayingSinusoid, DynamicsModel, ExternalForce, TwoLinkArm};
use crate::error::{Error, Result};
use crate::qpform::{CostSpec, ProblemSpec, Reference, Trajectory};
use crate::sqp::{LineSearchSettings, SolverSettings, SqpResult};

fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(values))
}

/// Joint state at rest reaching `target` with the arm's elbow-positive branch.
pub fn rest_state_at(arm: &TwoLinkArm, target: [f64; 2]) -> Result<DVector<f64>> {
    let q = arm
        .inverse_kinematics(target, 1.0)
        .ok_or_else(|| Error::InvalidConfig(format!("target {target:?} is outside the arm's workspace")))?;
    Ok(DVector::from_row_slice(&[q[0], q[1], 0.0, 0.0]))
}

/// Uniform target in an annular sector around the shoulder.
fn sample_target(rng: &mut ChaCha8Rng, radius: [f64; 2], angle: [f64; 2]) -> [f64; 2] {
    let r = rng.random_range(radius[0]..radius[1]);
    let a = rng.random_range(angle[0]..angle[1]);
    // angle measured from the downward vertical, positive toward +x
    [r * a.sin(), -r * a.cos()]
}

// ---------------------------------------------------------------------------
// ρ sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RhoSweepConfig {
    pub instances: usize,
    pub batch_sizes: Vec<usize>,
    pub iterations: usize,
    pub horizon: usize,
    pub dt: f64,
    pub seed: u64,
    pub workers: usize,
    pub merit_weight: f64,
}

impl Default for RhoSweepConfig {
    fn default() -> Self {
        Self {
            instances: 25,
            batch_sizes: vec![1, 4, 32],
            iterations: 20,
            horizon: 32,
            dt: 0.05,
            seed: 0,
            workers: 1,
            merit_weight: 1e3,
        }
    }
}

/// Best-of-batch outcome for one instance and batch size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoSweepRow {
    pub instance: usize,
    pub batch_size: usize,
    pub best_merit: f64,
    pub best_rho_init: f64,
    /// Best-of-batch merit after each iteration.
    pub merit_curve: Vec<f64>,
}

/// Two-link arm moving from hanging rest to a random rest pose.
pub fn reaching_instance(rng: &mut ChaCha8Rng, horizon: usize, dt: f64) -> Result<ProblemSpec> {
    let arm = TwoLinkArm::default();
    let goal = rest_state_at(&arm, sample_target(rng, [0.4, 0.9], [-1.8, 1.8]))?;
    let mut cost = CostSpec::tracking(diag(&[1.0, 1.0, 0.1, 0.1]), DMatrix::identity(2, 2) * 0.01, goal);
    cost.terminal_weight = diag(&[100.0, 100.0, 10.0, 10.0]);
    ProblemSpec::new(
        DynamicsModel::TwoLinkArm(arm),
        cost,
        horizon,
        dt,
        DVector::zeros(4),
        ExternalForce::zero(2),
    )
}

/// Merit at the iterate after each SQP iteration.
pub fn merit_curve(result: &SqpResult, iterations: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(iterations);
    for r in &result.trace {
        out.push(if r.accepted { r.merit } else { r.merit_before });
    }
    let last = out.last().copied().unwrap_or(result.final_merit);
    out.resize(iterations, last);
    out
}

/// Solves every instance with zero initialization under each batch size's
/// nested `ρ_init` grid and a fixed iteration budget.
pub fn rho_sweep_study(cfg: &RhoSweepConfig) -> Result<Vec<RhoSweepRow>> {
    if cfg.batch_sizes.is_empty() || cfg.batch_sizes.contains(&0) {
        return Err(Error::InvalidConfig("batch sizes must be >= 1".into()));
    }
    let engine = BatchEngine::new(cfg.workers)?;
    let settings = SolverSettings {
        max_iterations: cfg.iterations,
        fixed_budget: true,
        line_search: LineSearchSettings {
            merit_weight: cfg.merit_weight,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for instance in 0..cfg.instances {
        let problem = reaching_instance(&mut rng, cfg.horizon, cfg.dt)?;
        let init = Trajectory::zeros(4, 2, cfg.horizon);
        for &m in &cfg.batch_sizes {
            let grid = rho_grid(m);
            let mut spec = BatchSpec::new(settings);
            for &rho in &grid {
                spec.push(BatchItem::new(problem.clone(), init.clone()).with_rho_init(rho));
            }
            let batch = engine.solve(&spec)?;
            let mut curve = vec![f64::INFINITY; cfg.iterations];
            for r in batch.results.iter().flatten() {
                for (c, v) in curve.iter_mut().zip(merit_curve(r, cfg.iterations)) {
                    *c = c.min(v);
                }
            }
            let (best_merit, best_rho_init) = match batch.best_by_merit() {
                Some((i, r)) => (r.final_merit, grid[i]),
                None => (f64::INFINITY, f64::NAN),
            };
            rows.push(RhoSweepRow {
                instance,
                batch_size: m,
                best_merit,
                best_rho_init,
                merit_curve: curve,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Figure-8 tracking

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Figure8Config {
    pub seeds: Vec<u64>,
    pub batch_sizes: Vec<usize>,
    pub horizon: usize,
    pub dt: f64,
    pub steps: usize,
    /// Figure-8 center, half-width and half-height (m) and period (s).
    pub center: [f64; 2],
    pub half_width: f64,
    pub half_height: f64,
    pub period: f64,
    /// Range of the constant tip-force magnitude (N); its direction is uniform.
    pub force_magnitude: [f64; 2],
    /// Hypothesis radius (N).
    pub radius: f64,
    pub workers: usize,
    pub mpc: MpcConfig,
}

impl Default for Figure8Config {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            batch_sizes: vec![1, 16],
            horizon: 12,
            dt: 0.02,
            steps: 125,
            center: [0.3, -0.55],
            half_width: 0.2,
            half_height: 0.12,
            period: 3.0,
            force_magnitude: [2.0, 4.0],
            radius: 0.5,
            workers: 1,
            mpc: MpcConfig {
                settings: SolverSettings {
                    max_iterations: 3,
                    line_search: LineSearchSettings {
                        merit_weight: 1e3,
                        ..Default::default()
                    },
                    ..Default::default()
                },
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure8Row {
    pub seed: u64,
    pub batch_size: usize,
    pub rms_error: f64,
    pub joint_velocity: f64,
    /// `‖f̂ − f‖` at the end of the run.
    pub final_force_error: f64,
    pub failures: usize,
}

/// Tip position on the figure-8 at time `t`.
pub fn figure8_point(cfg: &Figure8Config, t: f64) -> [f64; 2] {
    let w = std::f64::consts::TAU / cfg.period;
    [
        cfg.center[0] + cfg.half_width * (w * t).sin(),
        cfg.center[1] + cfg.half_height * (2.0 * w * t).sin(),
    ]
}

/// Joint-space reference states sampled every `dt`, with velocities from
/// central differences of the inverse kinematics.
pub fn figure8_reference(arm: &TwoLinkArm, cfg: &Figure8Config, samples: usize) -> Result<Vec<DVector<f64>>> {
    let ik = |t: f64| {
        arm.inverse_kinematics(figure8_point(cfg, t), 1.0)
            .ok_or_else(|| Error::InvalidConfig("figure-8 leaves the arm's workspace".into()))
    };
    let eps = 1e-4;
    (0..samples)
        .map(|i| {
            let t = i as f64 * cfg.dt;
            let q = ik(t)?;
            let (qp, qm) = (ik(t + eps)?, ik(t - eps)?);
            Ok(DVector::from_row_slice(&[
                q[0],
                q[1],
                (qp[0] - qm[0]) / (2.0 * eps),
                (qp[1] - qm[1]) / (2.0 * eps),
            ]))
        })
        .collect()
}

fn tracking_cost() -> CostSpec {
    let mut cost = CostSpec::tracking(diag(&[100.0, 100.0, 1.0, 1.0]), DMatrix::identity(2, 2) * 1e-3, DVector::zeros(4));
    cost.terminal_weight = diag(&[100.0, 100.0, 1.0, 1.0]);
    cost
}

/// One closed-loop figure-8 run with `batch_size` force hypotheses.
pub fn figure8_run(cfg: &Figure8Config, seed: u64, batch_size: usize) -> Result<Figure8Row> {
    let arm = TwoLinkArm::default();
    let goals = figure8_reference(&arm, cfg, cfg.steps + cfg.horizon + 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let magnitude = rng.random_range(cfg.force_magnitude[0]..=cfg.force_magnitude[1]);
    let direction = super::unit_direction(&mut rng, 2);
    let truth = &direction * magnitude;
    let problem = ProblemSpec::new(
        DynamicsModel::TwoLinkArm(arm),
        tracking_cost(),
        cfg.horizon,
        cfg.dt,
        goals[0].clone(),
        ExternalForce::zero(2),
    )?;
    let mpc = MpcConfig {
        mode: MpcMode::BatchedHypotheses {
            count: batch_size,
            radius: cfg.radius,
        },
        workers: cfg.workers,
        seed: rng.random(),
        ..cfg.mpc.clone()
    };
    let mut ctl = MpcController::new(&problem, &mpc)?;
    let trace = run_closed_loop(&problem, &ReferencePath::Samples(goals), &ExternalForce::Constant(truth.clone()), cfg.steps, &mut ctl)?;
    Ok(Figure8Row {
        seed,
        batch_size,
        rms_error: trace.rms_tracking_error,
        joint_velocity: trace.total_joint_velocity,
        final_force_error: (ctl.force_estimate() - truth).norm(),
        failures: trace.failures,
    })
}

pub fn figure8_study(cfg: &Figure8Config) -> Result<Vec<Figure8Row>> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        for &m in &cfg.batch_sizes {
            rows.push(figure8_run(cfg, seed, m)?);
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Sequential reaching under a swinging payload

/// Inputs of the reaching suite; the committed standard scenario is
/// [`ReachingScenario::standard`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReachingScenario {
    pub seeds: Vec<u64>,
    pub batch_sizes: Vec<usize>,
    pub targets: usize,
    pub horizon: usize,
    pub dt: f64,
    /// Success radius around each target (m).
    pub success_radius: f64,
    /// Time allowed per target (s).
    pub time_limit: f64,
    /// Time the tip must stay inside the success radius (s).
    pub dwell_time: f64,
    /// Target annulus radii (m) and angle range from the downward vertical (rad).
    pub target_radius: [f64; 2],
    pub target_angle: [f64; 2],
    pub payload_mass: [f64; 2],
    /// Pendulum length of the payload (m); sets the swing frequency.
    pub payload_length: [f64; 2],
    /// Initial swing amplitude (rad).
    pub swing_amplitude: [f64; 2],
    /// Exponential decay rate of the swing (1/s).
    pub swing_decay: [f64; 2],
    pub gravity: f64,
    /// Tracking weights on joint positions and velocities, and on controls.
    pub position_weight: f64,
    pub velocity_weight: f64,
    pub control_weight: f64,
    /// Hypothesis radius (N).
    pub radius: f64,
    pub workers: usize,
    pub mpc: MpcConfig,
}

impl ReachingScenario {
    pub const STANDARD_JSON: &'static str = include_str!("../../data/reaching_standard.json");

    /// The committed standard scenario file.
    pub fn standard() -> Self {
        serde_json::from_str(Self::STANDARD_JSON).expect("committed scenario parses")
    }

    pub fn validate(&self) -> Result<()> {
        let range = |r: [f64; 2], what: &str| {
            if !(r[0] <= r[1]) {
                return Err(Error::InvalidConfig(format!("{what} range is empty")));
            }
            Ok(())
        };
        range(self.target_radius, "target_radius")?;
        range(self.target_angle, "target_angle")?;
        range(self.payload_mass, "payload_mass")?;
        range(self.payload_length, "payload_length")?;
        range(self.swing_amplitude, "swing_amplitude")?;
        range(self.swing_decay, "swing_decay")?;
        if self.targets == 0 || !(self.time_limit > 0.0) || !(self.success_radius > 0.0) {
            return Err(Error::InvalidConfig("targets, time_limit and success_radius must be positive".into()));
        }
        if !(self.dwell_time >= 0.0) || self.dwell_time >= self.time_limit {
            return Err(Error::InvalidConfig("dwell_time must lie in [0, time_limit)".into()));
        }
        if self.payload_length[0] <= 0.0 {
            return Err(Error::InvalidConfig("payload_length must be positive".into()));
        }
        Ok(())
    }
}

/// Per-seed outcome of a reaching run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachingMetrics {
    pub seed: u64,
    pub batch_size: usize,
    pub targets: usize,
    pub reached: usize,
    /// Percentage of targets reached within the time limit.
    pub success_rate: f64,
    /// Mean time to reach, over reached targets (NaN when none were reached).
    pub mean_completion_time: f64,
    pub failures: usize,
}

/// Tip force of a payload hanging from the tip and swinging in the plane:
/// its weight plus a decaying lateral component.
pub fn payload_force(mass: f64, length: f64, amplitude: f64, decay: f64, gravity: f64) -> DecayingSinusoid {
    let weight = mass * gravity;
    DecayingSinusoid {
        offset: vec![0.0, -weight],
        amplitude: vec![weight * amplitude.sin(), 0.0],
        omega: (gravity / length).sqrt(),
        phase: 0.0,
        decay,
    }
}

/// Runs `scenario.targets` sequential reaches for one seed with the given
/// controller mode. A target counts as reached once the tip has stayed
/// within the success radius for the dwell time; the next target is
/// commanded then, or when the time limit runs out.
pub fn run_reaching_suite(scenario: &ReachingScenario, mode: MpcMode, seed: u64) -> Result<ReachingMetrics> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.random_range(r[0]..r[1]) };
    let force = payload_force(
        draw(&mut rng, scenario.payload_mass),
        draw(&mut rng, scenario.payload_length),
        draw(&mut rng, scenario.swing_amplitude),
        draw(&mut rng, scenario.swing_decay),
        scenario.gravity,
    );
    let disturbance = ExternalForce::DecayingSinusoid(force);
    let arm = TwoLinkArm::default();
    let targets: Vec<[f64; 2]> = (0..scenario.targets)
        .map(|_| sample_target(&mut rng, scenario.target_radius, scenario.target_angle))
        .collect();
    let goals: Vec<DVector<f64>> = targets.iter().map(|t| rest_state_at(&arm, *t)).collect::<Result<_>>()?;

    let model = DynamicsModel::TwoLinkArm(arm);
    let (wq, wv) = (scenario.position_weight, scenario.velocity_weight);
    let cost = CostSpec::tracking(
        diag(&[wq, wq, wv, wv]),
        DMatrix::identity(2, 2) * scenario.control_weight,
        DVector::zeros(4),
    );
    let problem = ProblemSpec::new(
        model.clone(),
        cost,
        scenario.horizon,
        scenario.dt,
        DVector::zeros(4),
        ExternalForce::zero(2),
    )?;
    let config = MpcConfig {
        mode,
        workers: scenario.workers,
        seed: rng.random(),
        ..scenario.mpc.clone()
    };
    let mut ctl = MpcController::new(&problem, &config)?;
    let steps_per_target = (scenario.time_limit / scenario.dt).round() as usize;
    let dwell_steps = (scenario.dwell_time / scenario.dt).round() as usize;
    let mut x = DVector::zeros(4);
    let mut step = 0usize;
    let (mut reached, mut total_time, mut failures) = (0, 0.0, 0);
    for (target, goal) in targets.iter().zip(&goals) {
        let target = DVector::from_row_slice(target);
        let mut inside = 0usize;
        for local in 0..steps_per_target {
            let measured = ctl.measure(&x);
            let plan = ctl.plan(&measured, Reference::Fixed(goal.clone()))?;
            failures += plan.failed as usize;
            let next = simulate_plant(&model, &x, &plan.control, scenario.dt, &config.plant, &disturbance, step as f64 * scenario.dt)?;
            ctl.observe(&measured, &plan.control);
            x = next;
            step += 1;
            if (model.task_position(&x) - &target).norm() <= scenario.success_radius {
                inside += 1;
            } else {
                inside = 0;
            }
            if inside > dwell_steps {
                reached += 1;
                total_time += (local + 1) as f64 * scenario.dt;
                break;
            }
        }
    }
    Ok(ReachingMetrics {
        seed,
        batch_size: mode.batch_size(),
        targets: scenario.targets,
        reached,
        success_rate: 100.0 * reached as f64 / scenario.targets as f64,
        mean_completion_time: if reached > 0 { total_time / reached as f64 } else { f64::NAN },
        failures,
    })
}

/// Every seed of the scenario under every batch size (hypothesis mode).
pub fn reaching_study(scenario: &ReachingScenario) -> Result<Vec<ReachingMetrics>> {
    let mut out = Vec::new();
    for &seed in &scenario.seeds {
        for &m in &scenario.batch_sizes {
            let mode = MpcMode::BatchedHypotheses {
                count: m,
                radius: scenario.radius,
            };
            out.push(run_reaching_suite(scenario, mode, seed)?);
        }
    }
    Ok(out)
}

/// Median of finite values; NaN if there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}
