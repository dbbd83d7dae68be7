//! Closed-loop receding-horizon control on top of the batch engine.
//!
//! At every control step the controller solves a batch of problems that
//! differ either in the assumed external force (hypothesize-and-test) or in
//! the initial damping (ρ sweep), applies the first control of one member to
//! a finely integrated plant driven by the true disturbance, and carries the
//! chosen solution forward as the next warm start.

pub mod studies;

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::{BatchEngine, BatchItem, BatchSpec};
use crate::dynamics::{simulate_plant, DynamicsModel, ExternalForce, PlantConfig};
use crate::error::{Error, Result};
use crate::qpform::{ProblemSpec, Reference, Trajectory};
use crate::sqp::SolverSettings;

/// Candidate constant forces around a center estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    pub center: DVector<f64>,
    pub radius: f64,
    pub seed: u64,
    /// `candidates[0]` is the center; the rest lie at distance `radius`.
    pub candidates: Vec<DVector<f64>>,
}

impl HypothesisSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Uniform direction on the unit sphere by normalizing a standard Gaussian.
pub fn unit_direction(rng: &mut impl Rng, dim: usize) -> DVector<f64> {
    loop {
        let d = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = d.norm();
        if norm > 1e-12 {
            return d / norm;
        }
    }
}

/// `count` candidates: the center, then `center + radius · d_j` with
/// directions uniform on the sphere.
pub fn sample_hypotheses(center: &DVector<f64>, radius: f64, count: usize, seed: u64) -> Result<HypothesisSet> {
    if count == 0 {
        return Err(Error::InvalidConfig("hypothesis count must be >= 1".into()));
    }
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::InvalidConfig(format!("hypothesis radius must be >= 0, got {radius}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = Vec::with_capacity(count);
    candidates.push(center.clone());
    for _ in 1..count {
        candidates.push(center + unit_direction(&mut rng, center.len()) * radius);
    }
    Ok(HypothesisSet {
        center: center.clone(),
        radius,
        seed,
        candidates,
    })
}

/// Distance used to compare predicted and measured states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    FullState,
    /// Only the generalized coordinates (first half of the state).
    PositionOnly,
}

/// Index of the candidate whose one-period prediction from `x_prev` under
/// `u_applied` lands closest to `x_meas`; ties go to the lowest index.
#[allow(clippy::too_many_arguments)]
pub fn select_hypothesis(
    model: &DynamicsModel,
    x_prev: &DVector<f64>,
    u_applied: &DVector<f64>,
    x_meas: &DVector<f64>,
    hypotheses: &HypothesisSet,
    control_period: f64,
    plant: &PlantConfig,
    metric: SelectionMetric,
) -> Result<usize> {
    let mut best = (0, f64::INFINITY);
    for (j, f) in hypotheses.candidates.iter().enumerate() {
        let pred = simulate_plant(model, x_prev, u_applied, control_period, plant, &ExternalForce::Constant(f.clone()), 0.0)?;
        let diff = pred - x_meas;
        let dist = match metric {
            SelectionMetric::FullState => diff.norm(),
            SelectionMetric::PositionOnly => diff.rows(0, diff.len() / 2).norm(),
        };
        if dist < best.1 {
            best = (j, dist);
        }
    }
    Ok(best.0)
}

/// Drops the first knot and duplicates the last state and control.
pub fn shift_warm_start(prev: &Trajectory) -> Trajectory {
    let shift = |v: &[DVector<f64>]| {
        let mut out: Vec<_> = v.iter().skip(1).cloned().collect();
        if let Some(last) = v.last() {
            out.push(last.clone());
        }
        out
    };
    Trajectory {
        states: shift(&prev.states),
        controls: shift(&prev.controls),
    }
}

/// Log-uniform `ρ_init` values over `[1e-8, 1e1]`.
///
/// Exponents sit on the rotated lattice `frac(7/9 + i/M)`, so the grid for
/// `M` is contained in the grid for every multiple of `M`, and `M = 1`
/// gives `ρ = 1e-1`.
pub fn rho_grid(count: usize) -> Vec<f64> {
    const LOG_MIN: f64 = -8.0;
    const LOG_SPAN: f64 = 9.0;
    const OFFSET: f64 = 7.0 / 9.0;
    (0..count)
        .map(|i| {
            let t = (OFFSET + i as f64 / count as f64).fract();
            10f64.powf(LOG_MIN + LOG_SPAN * t)
        })
        .collect()
}

/// How each control step's batch is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MpcMode {
    /// One problem with the current force estimate.
    Single,
    /// `count` force hypotheses at distance `radius` around the estimate.
    BatchedHypotheses { count: usize, radius: f64 },
    /// `count` problems that differ only in `ρ_init`; the lowest merit wins.
    RhoSweep { count: usize },
}

impl MpcMode {
    pub fn batch_size(&self) -> usize {
        match *self {
            MpcMode::Single => 1,
            MpcMode::BatchedHypotheses { count, .. } | MpcMode::RhoSweep { count } => count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub mode: MpcMode,
    pub settings: SolverSettings,
    pub plant: PlantConfig,
    pub workers: usize,
    pub seed: u64,
    pub selection: SelectionMetric,
    /// Standard deviation of additive Gaussian measurement noise.
    pub measurement_noise: f64,
    /// Initial force estimate; zero if absent.
    pub initial_force: Option<Vec<f64>>,
    /// Warm start from the previous solution instead of zeros.
    pub warm_start: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            mode: MpcMode::Single,
            settings: SolverSettings {
                max_iterations: 3,
                ..Default::default()
            },
            plant: PlantConfig::default(),
            workers: 1,
            seed: 0,
            selection: SelectionMetric::FullState,
            measurement_noise: 0.0,
            initial_force: None,
            warm_start: true,
        }
    }
}

/// One planning step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub control: Vec<f64>,
    /// Plant state after applying the control.
    pub state: Vec<f64>,
    pub selected: usize,
    pub merit: f64,
    pub sqp_iterations: usize,
    pub solve_time: f64,
    /// `‖task(x) − task(goal)‖` at the start of the step.
    pub tracking_error: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpcTrace {
    pub records: Vec<StepRecord>,
    /// Root-mean-square task-space tracking error over all steps.
    pub rms_tracking_error: f64,
    /// Sum over steps of the L1 norm of the generalized velocities.
    pub total_joint_velocity: f64,
    pub failures: usize,
}

impl MpcTrace {
    fn from_records(records: Vec<StepRecord>, model: &DynamicsModel) -> Self {
        let len = records.len().max(1) as f64;
        let rms = (records.iter().map(|r| r.tracking_error.powi(2)).sum::<f64>() / len).sqrt();
        let vel = records
            .iter()
            .map(|r| model.velocities(&DVector::from_row_slice(&r.state)).lp_norm(1))
            .sum();
        let failures = records.iter().filter(|r| r.failed).count();
        Self {
            records,
            rms_tracking_error: rms,
            total_joint_velocity: vel,
            failures,
        }
    }
}

/// What one call to [`MpcController::plan`] decided.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub control: DVector<f64>,
    pub selected: usize,
    pub merit: f64,
    pub sqp_iterations: usize,
    pub solve_time: f64,
    pub failed: bool,
    /// Solution the control was taken from, if any member succeeded.
    pub solution: Option<Trajectory>,
}

/// Receding-horizon controller state carried between control steps.
#[derive(Debug)]
pub struct MpcController {
    template: ProblemSpec,
    config: MpcConfig,
    engine: BatchEngine,
    rng: ChaCha8Rng,
    hypotheses: HypothesisSet,
    warm: Option<Trajectory>,
    last_control: DVector<f64>,
    last_transition: Option<(DVector<f64>, DVector<f64>)>,
}

impl MpcController {
    pub fn new(template: &ProblemSpec, config: &MpcConfig) -> Result<Self> {
        template.validate()?;
        config.settings.validate()?;
        let fd = template.model.force_dim();
        let center = match &config.initial_force {
            Some(f) if f.len() != fd => return Err(Error::dim("initial force", fd, f.len())),
            Some(f) => DVector::from_row_slice(f),
            None => DVector::zeros(fd),
        };
        if config.mode.batch_size() == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if !(config.measurement_noise >= 0.0) {
            return Err(Error::InvalidConfig("measurement_noise must be >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let hypotheses = Self::sample(&config.mode, &center, &mut rng)?;
        Ok(Self {
            template: template.clone(),
            config: config.clone(),
            engine: BatchEngine::new(config.workers)?,
            rng,
            hypotheses,
            warm: None,
            last_control: DVector::zeros(template.control_dim()),
            last_transition: None,
        })
    }

    fn sample(mode: &MpcMode, center: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<HypothesisSet> {
        let seed = rng.next_u64();
        match *mode {
            MpcMode::BatchedHypotheses { count, radius } => sample_hypotheses(center, radius, count, seed),
            _ => sample_hypotheses(center, 0.0, 1, seed),
        }
    }

    pub fn hypotheses(&self) -> &HypothesisSet {
        &self.hypotheses
    }

    /// Current force estimate (the hypothesis center).
    pub fn force_estimate(&self) -> &DVector<f64> {
        &self.hypotheses.center
    }

    /// Records the outcome of applying `u` from `x_prev`; the next call to
    /// [`plan`](Self::plan) selects a hypothesis against it.
    pub fn observe(&mut self, x_prev: &DVector<f64>, u: &DVector<f64>) {
        self.last_transition = Some((x_prev.clone(), u.clone()));
    }

    /// Chooses the control for measured state `x` with goals `reference`.
    pub fn plan(&mut self, x: &DVector<f64>, reference: Reference) -> Result<Plan> {
        let selected = match (&self.config.mode, &self.last_transition) {
            (MpcMode::BatchedHypotheses { .. }, Some((x_prev, u))) => select_hypothesis(
                &self.template.model,
                x_prev,
                u,
                x,
                &self.hypotheses,
                self.template.dt,
                &self.config.plant,
                self.config.selection,
            )?,
            _ => 0,
        };

        let mut base = self.template.clone();
        base.start = x.clone();
        base.cost.reference = reference;
        base.validate()?;
        let (n, m, horizon) = (base.state_dim(), base.control_dim(), base.horizon);
        let init = match (&self.warm, self.config.warm_start) {
            (Some(prev), true) => shift_warm_start(prev),
            _ => Trajectory::zeros(n, m, horizon),
        };

        let mut spec = BatchSpec::new(self.config.settings);
        match self.config.mode {
            MpcMode::Single | MpcMode::BatchedHypotheses { .. } => {
                for f in &self.hypotheses.candidates {
                    let mut p = base.clone();
                    p.force = ExternalForce::Constant(f.clone());
                    spec.push(BatchItem::new(p, init.clone()));
                }
            }
            MpcMode::RhoSweep { count } => {
                let mut p = base.clone();
                p.force = ExternalForce::Constant(self.hypotheses.center.clone());
                for rho in rho_grid(count) {
                    spec.push(BatchItem::new(p.clone(), init.clone()).with_rho_init(rho));
                }
            }
        }
        let batch = self.engine.solve(&spec)?;

        let chosen = match self.config.mode {
            MpcMode::RhoSweep { .. } => batch.best_by_merit().map(|(i, _)| i),
            _ => batch.results[selected].as_ref().ok().map(|_| selected),
        };
        let solve_time = batch.wall_time;
        let plan = match chosen {
            Some(i) => {
                let res = batch.results[i].as_ref().expect("chosen member succeeded");
                let control = res.trajectory.controls[0].clone();
                self.warm = Some(res.trajectory.clone());
                Plan {
                    control,
                    selected: i,
                    merit: res.final_merit,
                    sqp_iterations: res.iterations,
                    solve_time,
                    failed: !res.trajectory.controls[0].iter().all(|v| v.is_finite()),
                    solution: Some(res.trajectory.clone()),
                }
            }
            None => Plan {
                control: self.last_control.clone(),
                selected,
                merit: f64::INFINITY,
                sqp_iterations: 0,
                solve_time,
                failed: true,
                solution: None,
            },
        };
        let plan = if plan.failed {
            Plan {
                control: self.last_control.clone(),
                ..plan
            }
        } else {
            plan
        };
        self.last_control = plan.control.clone();

        if let MpcMode::BatchedHypotheses { .. } = self.config.mode {
            let center = self.hypotheses.candidates[selected].clone();
            self.hypotheses = Self::sample(&self.config.mode, &center, &mut self.rng)?;
        }
        Ok(plan)
    }

    /// Adds measurement noise (if configured) to a true plant state.
    pub fn measure(&mut self, x_true: &DVector<f64>) -> DVector<f64> {
        let sd = self.config.measurement_noise;
        if sd == 0.0 {
            return x_true.clone();
        }
        x_true.map(|v| v + sd * self.rng.sample::<f64, _>(StandardNormal))
    }
}

/// Goals for each control step of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferencePath {
    /// Use the template problem's reference at every step.
    Template,
    /// Absolute per-step goal states; step `i` tracks entries `i..=i+N`,
    /// holding the last entry past the end.
    Samples(Vec<DVector<f64>>),
}

impl ReferencePath {
    pub fn at_step(&self, template: &ProblemSpec, step: usize) -> Reference {
        match self {
            ReferencePath::Template => template.cost.reference.clone(),
            ReferencePath::Samples(goals) => {
                let last = goals.len() - 1;
                Reference::PerKnot((0..=template.horizon).map(|k| goals[(step + k).min(last)].clone()).collect())
            }
        }
    }
}

/// Runs `steps` control periods of length `problem.dt` against a plant
/// driven by `disturbance`.
pub fn run_mpc(
    problem: &ProblemSpec,
    reference: &ReferencePath,
    disturbance: &ExternalForce,
    steps: usize,
    config: &MpcConfig,
) -> Result<MpcTrace> {
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be >= 1".into()));
    }
    if let ReferencePath::Samples(goals) = reference {
        if goals.is_empty() {
            return Err(Error::InvalidConfig("reference path is empty".into()));
        }
    }
    if disturbance.dim() != problem.model.force_dim() {
        return Err(Error::dim("true disturbance", problem.model.force_dim(), disturbance.dim()));
    }
    let mut ctl = MpcController::new(problem, config)?;
    run_closed_loop(problem, reference, disturbance, steps, &mut ctl)
}

/// Closed loop with a caller-owned controller, so its final state (for
/// example the force estimate) can be inspected afterwards.
pub fn run_closed_loop(
    problem: &ProblemSpec,
    reference: &ReferencePath,
    disturbance: &ExternalForce,
    steps: usize,
    ctl: &mut MpcController,
) -> Result<MpcTrace> {
    let plant = ctl.config.plant;
    let mut x = problem.start.clone();
    let mut records = Vec::with_capacity(steps);
    for step in 0..steps {
        let time = step as f64 * problem.dt;
        let goals = reference.at_step(problem, step);
        let goal0 = match &goals {
            Reference::Fixed(g) => g.clone(),
            Reference::PerKnot(gs) => gs[0].clone(),
        };
        let measured = ctl.measure(&x);
        let plan = ctl.plan(&measured, goals)?;
        let tracking_error =
            (problem.model.task_position(&x) - problem.model.task_position(&goal0)).norm();
        let next = simulate_plant(&problem.model, &x, &plan.control, problem.dt, &plant, disturbance, time)?;
        ctl.observe(&measured, &plan.control);
        records.push(StepRecord {
            step,
            time,
            control: plan.control.as_slice().to_vec(),
            state: next.as_slice().to_vec(),
            selected: plan.selected,
            merit: plan.merit,
            sqp_iterations: plan.sqp_iterations,
            solve_time: plan.solve_time,
            tracking_error,
            failed: plan.failed,
        });
        x = next;
    }
    Ok(MpcTrace::from_records(records, &problem.model))
}
