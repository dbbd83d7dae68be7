//! Independent reference solvers and randomized equivalence suites.
//!
//! The oracles here deliberately avoid the production code paths they are
//! used to check: the Riccati recursion discretizes linear dynamics in
//! closed form rather than through `step_jacobians`, and the KKT comparison
//! uses a dense LU factorization.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blocktri::{pcg, BlockTriMatrix, PcgSettings};
use crate::dynamics::{DynamicsModel, ExternalForce, LinearSystem};
use crate::error::{Error, Result};
use crate::qpform::{
    form_kkt, form_preconditioner, form_schur, recover_step, CostSpec, KnotLinearization,
    Linearization, ProblemSpec, Trajectory,
};
use crate::sqp::{sqp_solve, SolverSettings};

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn uniform_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-scale..scale))
}

/// Random SPD matrix `L Lᵀ / dim + shift·I`.
pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize, shift: f64) -> DMatrix<f64> {
    let l = uniform_matrix(rng, dim, dim, 1.0);
    let m = &l * l.transpose() / dim as f64 + DMatrix::identity(dim, dim) * shift;
    (&m + m.transpose()) * 0.5
}

/// Random well-conditioned QP data with damping `rho` on every Hessian block.
pub fn random_linearization(
    rng: &mut ChaCha8Rng,
    horizon: usize,
    n: usize,
    m: usize,
    rho: f64,
) -> Linearization {
    let eye_n = DMatrix::<f64>::identity(n, n);
    let eye_m = DMatrix::<f64>::identity(m, m);
    let knots = (0..horizon)
        .map(|_| KnotLinearization {
            a: &eye_n + uniform_matrix(rng, n, n, 0.3),
            b: uniform_matrix(rng, n, m, 1.0),
            defect: uniform_vector(rng, n, 0.5),
            state_hessian: random_spd(rng, n, 0.5) + &eye_n * rho,
            state_gradient: uniform_vector(rng, n, 1.0),
            control_hessian: random_spd(rng, m, 0.5) + &eye_m * rho,
            control_gradient: uniform_vector(rng, m, 1.0),
        })
        .collect();
    Linearization {
        knots,
        terminal_hessian: random_spd(rng, n, 0.5) + &eye_n * rho,
        terminal_gradient: uniform_vector(rng, n, 1.0),
        initial_defect: uniform_vector(rng, n, 0.5),
    }
}

/// Same as [`random_linearization`] with every `A_k = 0`, which makes the
/// Schur complement block diagonal.
pub fn random_decoupled_linearization(
    rng: &mut ChaCha8Rng,
    horizon: usize,
    n: usize,
    m: usize,
    rho: f64,
) -> Linearization {
    let mut lin = random_linearization(rng, horizon, n, m, rho);
    for k in &mut lin.knots {
        k.a.fill(0.0);
    }
    lin
}

/// Continuous affine model `ẋ = A x + B u + W f` for the linear models.
fn continuous_affine(model: &DynamicsModel) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    match model {
        DynamicsModel::DoubleIntegrator(di) => {
            let d = di.dim;
            let mut a = DMatrix::zeros(2 * d, 2 * d);
            let mut b = DMatrix::zeros(2 * d, d);
            for i in 0..d {
                a[(i, d + i)] = 1.0;
                b[(d + i, i)] = 1.0;
            }
            let w = &b / di.mass;
            Ok((a, b, w))
        }
        DynamicsModel::Linear(sys) => {
            let b = sys.b_matrix();
            Ok((sys.a_matrix(), b.clone(), b))
        }
        other => Err(Error::InvalidConfig(format!(
            "Riccati oracle needs linear dynamics, got {}",
            other.name()
        ))),
    }
}

/// Exact RK4 map of a linear system: `A_d = Σ_{i≤4} (hA)^i / i!` and the
/// input map `h (I + hA/2 + (hA)²/6 + (hA)³/24)`.
pub fn rk4_discretize(a: &DMatrix<f64>, h: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let ha = a * h;
    let ha2 = &ha * &ha;
    let ha3 = &ha2 * &ha;
    let ha4 = &ha3 * &ha;
    let eye = DMatrix::<f64>::identity(n, n);
    let ad = &eye + &ha + &ha2 / 2.0 + &ha3 / 6.0 + &ha4 / 24.0;
    let input = (&eye + &ha / 2.0 + &ha2 / 6.0 + &ha3 / 24.0) * h;
    (ad, input)
}

/// Optimal trajectory of a linear-dynamics problem by a backward Riccati
/// pass and forward rollout of the affine feedback law.
pub fn riccati_oracle(problem: &ProblemSpec) -> Result<Trajectory> {
    problem.validate()?;
    let (ac, bc, wc) = continuous_affine(&problem.model)?;
    let (ad, input) = rk4_discretize(&ac, problem.dt);
    let bd = &input * &bc;
    let horizon = problem.horizon;
    let drift: Vec<DVector<f64>> = (0..horizon)
        .map(|k| &input * (&wc * problem.force_at_knot(k)))
        .collect();
    let cost = &problem.cost;
    let (q, r) = (&cost.state_weight, &cost.control_weight);

    let mut p = cost.terminal_weight.clone();
    let mut s = -(&cost.terminal_weight * cost.goal(horizon));
    let mut gains = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); horizon];
    for k in (0..horizon).rev() {
        let pc_s = &p * &drift[k] + &s;
        let huu = r + bd.transpose() * &p * &bd;
        let hux = bd.transpose() * &p * &ad;
        let hu = bd.transpose() * &pc_s;
        let chol = huu.cholesky().ok_or(Error::Factorization {
            what: "Riccati control Hessian",
            knot: k,
        })?;
        let gain = -chol.solve(&hux);
        let feed = -chol.solve(&hu);
        let next_p = q + ad.transpose() * &p * &ad + hux.transpose() * &gain;
        s = -(q * cost.goal(k)) + ad.transpose() * &pc_s + hux.transpose() * &feed;
        p = (&next_p + next_p.transpose()) * 0.5;
        gains[k] = (gain, feed);
    }

    let mut states = vec![problem.start.clone()];
    let mut controls = Vec::with_capacity(horizon);
    for (k, (gain, feed)) in gains.iter().enumerate() {
        let u = gain * &states[k] + feed;
        states.push(&ad * &states[k] + &bd * &u + &drift[k]);
        controls.push(u);
    }
    Ok(Trajectory { states, controls })
}

/// Random LQR instance on a linear model with a constant affine force.
pub fn random_lqr_problem(rng: &mut ChaCha8Rng, horizon: usize, n: usize, m: usize) -> ProblemSpec {
    let a = uniform_matrix(rng, n, n, 1.0);
    let b = uniform_matrix(rng, n, m, 1.0);
    let model = DynamicsModel::Linear(LinearSystem::new(&a, &b).expect("square A, matching B"));
    let mut cost = CostSpec::tracking(
        random_spd(rng, n, 0.5),
        random_spd(rng, m, 0.5),
        uniform_vector(rng, n, 1.0),
    );
    cost.terminal_weight = random_spd(rng, n, 1.0);
    let force: Vec<f64> = (0..m).map(|_| rng.random_range(-0.2..0.2)).collect();
    ProblemSpec::new(
        model,
        cost,
        horizon,
        0.1,
        uniform_vector(rng, n, 1.0),
        ExternalForce::constant(&force),
    )
    .expect("generated problem is valid")
}

/// One randomized Schur-versus-KKT comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchurKktCase {
    pub horizon: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    /// `‖δZ_schur − δZ_kkt‖∞ / ‖δZ_kkt‖∞`.
    pub relative_error: f64,
    pub stair_iterations: usize,
    pub identity_iterations: usize,
    pub passed: bool,
}

/// Outcome of a randomized oracle suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport<C> {
    pub name: &'static str,
    pub tolerance: f64,
    pub cases: Vec<C>,
    pub passed: usize,
    pub failed: usize,
}

impl<C> SuiteReport<C> {
    pub fn all_passed(&self) -> bool {
        self.failed == 0 && !self.cases.is_empty()
    }
}

pub const SCHUR_KKT_TOLERANCE: f64 = 1e-6;
pub const RICCATI_TOLERANCE: f64 = 1e-6;

/// Compares the Schur/PCG step against the dense KKT solve over the grid
/// `N ∈ {4, 8}`, `n ∈ {2, 4}`, `m ∈ {1, 2}` at `ρ = 1e-6`, cycling through
/// the grid for `instances` draws.
pub fn schur_kkt_suite(instances: usize, seed: u64) -> Result<SuiteReport<SchurKktCase>> {
    let grid: Vec<(usize, usize, usize)> = [4, 8]
        .iter()
        .flat_map(|&h| [2, 4].iter().flat_map(move |&n| [1, 2].iter().map(move |&m| (h, n, m))))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let settings = PcgSettings::new(1e-12, 10_000);
    let mut cases = Vec::with_capacity(instances);
    for i in 0..instances {
        let (horizon, n, m) = grid[i % grid.len()];
        let lin = random_linearization(&mut rng, horizon, n, m, 1e-6);
        let sys = form_schur(&lin)?;
        let stair = form_preconditioner(&sys)?;
        let res = pcg(&sys.s, &sys.gamma, &stair, &settings)?;
        let step = recover_step(&sys, &lin, &res.solution)?.stacked();
        let ident = BlockTriMatrix::identity(sys.s.n_blockrows(), sys.s.block_dim());
        let plain = pcg(&sys.s, &sys.gamma, &ident, &settings)?;
        let (dz, _) = form_kkt(&lin).solve()?;
        let relative_error = (&step - &dz).amax() / dz.amax().max(f64::MIN_POSITIVE);
        cases.push(SchurKktCase {
            horizon,
            state_dim: n,
            control_dim: m,
            relative_error,
            stair_iterations: res.iterations,
            identity_iterations: plain.iterations,
            passed: res.converged && relative_error <= SCHUR_KKT_TOLERANCE,
        });
    }
    Ok(report("schur_kkt", SCHUR_KKT_TOLERANCE, cases, |c| c.passed))
}

/// PCG iteration counts with the stair preconditioner on decoupled
/// (block-diagonal Schur complement) instances.
pub fn decoupled_iterations(instances: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let settings = PcgSettings::new(1e-12, 10_000);
    (0..instances)
        .map(|i| {
            let lin = random_decoupled_linearization(&mut rng, 4 + 4 * (i % 2), 2 + 2 * (i % 3 % 2), 1 + i % 2, 1e-6);
            let sys = form_schur(&lin)?;
            let p = form_preconditioner(&sys)?;
            Ok(pcg(&sys.s, &sys.gamma, &p, &settings)?.iterations)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiCase {
    pub horizon: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    pub max_error: f64,
    pub alpha: f64,
    pub accepted: bool,
    pub passed: bool,
}

/// One SQP iteration from the zero-control rollout against the Riccati
/// oracle, on random linear-quadratic instances.
pub fn riccati_suite(instances: usize, seed: u64) -> Result<SuiteReport<RiccatiCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let settings = SolverSettings {
        max_iterations: 1,
        rho_init: 0.0,
        rho_min: 0.0,
        fixed_budget: true,
        pcg: PcgSettings::new(1e-12, 10_000),
        ..Default::default()
    };
    let mut cases = Vec::with_capacity(instances);
    for i in 0..instances {
        let horizon = [5, 10, 20][i % 3];
        let n = 2 + i % 3;
        let m = 1 + i % 2;
        let problem = random_lqr_problem(&mut rng, horizon, n, m);
        let init = problem.rollout(&vec![DVector::zeros(m); horizon])?;
        let res = sqp_solve(&problem, &init, &settings)?;
        let oracle = riccati_oracle(&problem)?;
        let max_error = trajectory_distance(&res.trajectory, &oracle);
        let (alpha, accepted) = res.trace.first().map_or((f64::NAN, false), |r| (r.alpha, r.accepted));
        cases.push(RiccatiCase {
            horizon,
            state_dim: n,
            control_dim: m,
            max_error,
            alpha,
            accepted,
            passed: accepted && alpha == 1.0 && max_error <= RICCATI_TOLERANCE,
        });
    }
    Ok(report("riccati", RICCATI_TOLERANCE, cases, |c| c.passed))
}

/// Largest absolute entry difference between two trajectories.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .chain(a.controls.iter().zip(&b.controls))
        .map(|(x, y)| (x - y).amax())
        .fold(0.0, f64::max)
}

fn report<C>(name: &'static str, tolerance: f64, cases: Vec<C>, ok: impl Fn(&C) -> bool) -> SuiteReport<C> {
    let passed = cases.iter().filter(|c| ok(c)).count();
    SuiteReport {
        name,
        tolerance,
        failed: cases.len() - passed,
        passed,
        cases,
    }
}
