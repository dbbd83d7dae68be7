//! Single-problem SQP: linearize, solve the Schur system with PCG, recover
//! the step, then pick a step length by exhaustive merit evaluation over a
//! geometric candidate set.

use serde::{Deserialize, Serialize};

use crate::blocktri::{pcg, PcgResult, PcgSettings};
use crate::error::{Error, Result};
use crate::qpform::{
    form_preconditioner, form_schur, linearize, recover_step, Damping, Linearization,
    ProblemSpec, StepDirection, Trajectory,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearchSettings {
    /// Penalty `μ` on the L1 constraint violation.
    pub merit_weight: f64,
    /// Shrink base `β > 1`.
    pub shrink: f64,
    /// Exponent `𝒜`; the candidate set has `𝒜 + 1` entries.
    pub depth: usize,
}

impl Default for LineSearchSettings {
    fn default() -> Self {
        Self {
            merit_weight: 10.0,
            shrink: 2.0,
            depth: 8,
        }
    }
}

impl LineSearchSettings {
    /// `[1, 1/β, …, 1/β^𝒜]`, largest first.
    pub fn candidates(&self) -> Vec<f64> {
        (0..=self.depth)
            .map(|i| self.shrink.powi(-(i as i32)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.merit_weight > 0.0) {
            return Err(Error::InvalidConfig("merit_weight must be > 0".into()));
        }
        if !(self.shrink > 1.0) {
            return Err(Error::InvalidConfig("line-search shrink must be > 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub pcg: PcgSettings,
    pub line_search: LineSearchSettings,
    pub rho_init: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_factor: f64,
    /// Apply the damping to the control Hessian blocks as well as the state blocks.
    pub damp_controls: bool,
    /// Exit once both `‖δZ‖∞` and `‖c‖₁` fall below this.
    pub tolerance: f64,
    /// Run exactly `max_iterations` iterations, ignoring the tolerance exit.
    pub fixed_budget: bool,
    /// Damping increases allowed per iteration after a numerical failure.
    pub max_damping_retries: usize,
    /// Keep every iterate in the result.
    pub record_iterates: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            pcg: PcgSettings::default(),
            line_search: LineSearchSettings::default(),
            rho_init: 1e-4,
            rho_min: 1e-8,
            rho_max: 1e1,
            rho_factor: 5.0,
            damp_controls: true,
            tolerance: 1e-6,
            fixed_budget: false,
            max_damping_retries: 8,
            record_iterates: false,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        self.pcg.validate()?;
        self.line_search.validate()?;
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.rho_min >= 0.0 && self.rho_min <= self.rho_init && self.rho_init <= self.rho_max) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= rho_min <= rho_init <= rho_max, got {} / {} / {}",
                self.rho_min, self.rho_init, self.rho_max
            )));
        }
        if !(self.rho_factor > 1.0) {
            return Err(Error::InvalidConfig("rho_factor must be > 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidConfig("tolerance must be >= 0".into()));
        }
        Ok(())
    }

    pub fn with_rho_init(mut self, rho: f64) -> Self {
        self.rho_init = rho;
        self
    }
}

/// One SQP iteration that reached the line search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Merit at the iterate the step was taken from.
    pub merit_before: f64,
    /// Best candidate merit.
    pub merit: f64,
    pub constraint_l1: f64,
    pub alpha: f64,
    pub rho: f64,
    pub pcg_iterations: usize,
    pub pcg_converged: bool,
    pub step_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqpResult {
    pub trajectory: Trajectory,
    pub trace: Vec<TraceRecord>,
    pub converged: bool,
    /// Iterations performed, including a final tolerance check.
    pub iterations: usize,
    pub final_merit: f64,
    pub final_rho: f64,
    /// Iterate after each iteration; only filled with `record_iterates`.
    pub iterates: Vec<Trajectory>,
}

impl SqpResult {
    /// Merit after each accepted step, preceded by the initial merit.
    pub fn accepted_merits(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(first) = self.trace.first() {
            out.push(first.merit_before);
        }
        out.extend(self.trace.iter().filter(|r| r.accepted).map(|r| r.merit));
        out
    }
}

/// `J(X, U) + μ‖c‖₁`; `+∞` for non-finite trajectories.
pub fn merit(problem: &ProblemSpec, traj: &Trajectory, mu: f64) -> f64 {
    if !traj.is_finite() || traj.check(problem).is_err() {
        return f64::INFINITY;
    }
    let value = match problem.constraint_violation(traj) {
        Ok(c) => problem.cost(traj) + mu * c,
        Err(_) => f64::INFINITY,
    };
    if value.is_finite() {
        value
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub merit: f64,
    /// Merit at the current iterate.
    pub current_merit: f64,
    /// The best candidate strictly improves on the current merit.
    pub accepted: bool,
}

/// Evaluates the merit at every candidate step length and returns the
/// minimizer, ties going to the larger step.
pub fn line_search(
    problem: &ProblemSpec,
    traj: &Trajectory,
    step: &StepDirection,
    settings: &LineSearchSettings,
) -> LineSearchOutcome {
    let current = merit(problem, traj, settings.merit_weight);
    line_search_from(problem, traj, current, step, settings)
}

fn line_search_from(
    problem: &ProblemSpec,
    traj: &Trajectory,
    current_merit: f64,
    step: &StepDirection,
    settings: &LineSearchSettings,
) -> LineSearchOutcome {
    let mut best_alpha = 1.0;
    let mut best = f64::INFINITY;
    for alpha in settings.candidates() {
        let value = merit(problem, &traj.stepped(step, alpha), settings.merit_weight);
        if value < best {
            best = value;
            best_alpha = alpha;
        }
    }
    LineSearchOutcome {
        alpha: best_alpha,
        merit: best,
        current_merit,
        accepted: best < current_merit,
    }
}

/// Shrinks the damping after an accepted step and grows it after a
/// rejection, clamped to `[rho_min, rho_max]`.
pub fn adapt_rho(rho: f64, accepted: bool, settings: &SolverSettings) -> f64 {
    let next = if accepted {
        rho / settings.rho_factor
    } else {
        rho * settings.rho_factor
    };
    next.clamp(settings.rho_min, settings.rho_max)
}

/// Solves the QP for one linearization through the Schur complement.
pub fn solve_qp(lin: &Linearization, settings: &PcgSettings) -> Result<(StepDirection, PcgResult)> {
    let sys = form_schur(lin)?;
    let precond = form_preconditioner(&sys)?;
    let res = pcg(&sys.s, &sys.gamma, &precond, settings)?;
    let step = recover_step(&sys, lin, &res.solution)?;
    Ok((step, res))
}

pub fn sqp_solve(problem: &ProblemSpec, init: &Trajectory, settings: &SolverSettings) -> Result<SqpResult> {
    settings.validate()?;
    problem.validate()?;
    init.check(problem)?;

    let mu = settings.line_search.merit_weight;
    let mut traj = init.clone();
    let mut current = merit(problem, &traj, mu);
    let mut rho = settings.rho_init;
    let mut trace = Vec::new();
    let mut iterates = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 0..settings.max_iterations {
        iterations = iteration + 1;
        let ctx = |e: Error| Error::Sqp {
            iteration,
            source: Box::new(e),
        };

        let mut retries = 0;
        let (lin, step, pcg_res) = loop {
            let damping = Damping {
                rho,
                controls: settings.damp_controls,
            };
            let lin = linearize(problem, &traj, damping).map_err(ctx)?;
            match solve_qp(&lin, &settings.pcg) {
                Ok((step, res)) => break (lin, step, res),
                Err(e) if e.is_numerical() && retries < settings.max_damping_retries => {
                    retries += 1;
                    rho = (rho * settings.rho_factor)
                        .max(settings.rho_min)
                        .max(f64::MIN_POSITIVE)
                        .min(settings.rho_max);
                }
                Err(e) => return Err(ctx(e)),
            }
        };

        let step_norm = step.inf_norm();
        let constraint_l1 = lin.constraint_l1();
        if step_norm <= settings.tolerance && constraint_l1 <= settings.tolerance {
            converged = true;
            if !settings.fixed_budget {
                break;
            }
        }

        let ls = line_search_from(problem, &traj, current, &step, &settings.line_search);
        if ls.accepted {
            traj = traj.stepped(&step, ls.alpha);
            current = ls.merit;
        }
        trace.push(TraceRecord {
            iteration,
            merit_before: ls.current_merit,
            merit: ls.merit,
            constraint_l1,
            alpha: ls.alpha,
            rho,
            pcg_iterations: pcg_res.iterations,
            pcg_converged: pcg_res.converged,
            step_norm,
            accepted: ls.accepted,
        });
        if settings.record_iterates {
            iterates.push(traj.clone());
        }
        rho = adapt_rho(rho, ls.accepted, settings);
    }

    Ok(SqpResult {
        trajectory: traj,
        trace,
        converged,
        iterations,
        final_merit: current,
        final_rho: rho,
        iterates,
    })
}
