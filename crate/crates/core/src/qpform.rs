//! Per-iteration QP: cost expansion and dynamics linearization along a
//! nominal trajectory, the dense KKT system, and its Schur complement.
//!
//! Decision variables are stacked knot by knot as
//! `δZ = [δx_0, δu_0, δx_1, δu_1, …, δx_N]`. The Schur system is stored with
//! the positive-definite sign, `S = C G⁻¹ Cᵀ`, so that PCG applies directly.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::blocktri::BlockTriMatrix;
use crate::dynamics::{self, DynamicsModel, ExternalForce};
use crate::error::{Error, Result};

/// Goal for the tracking cost: one state, or one state per knot.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Fixed(DVector<f64>),
    PerKnot(Vec<DVector<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub state_weight: DMatrix<f64>,
    pub control_weight: DMatrix<f64>,
    pub terminal_weight: DMatrix<f64>,
    pub reference: Reference,
}

impl CostSpec {
    /// Same weight on every knot, with `terminal_weight = state_weight`.
    pub fn tracking(q: DMatrix<f64>, r: DMatrix<f64>, goal: DVector<f64>) -> Self {
        Self {
            terminal_weight: q.clone(),
            state_weight: q,
            control_weight: r,
            reference: Reference::Fixed(goal),
        }
    }

    pub fn goal(&self, k: usize) -> &DVector<f64> {
        match &self.reference {
            Reference::Fixed(g) => g,
            Reference::PerKnot(gs) => &gs[k.min(gs.len() - 1)],
        }
    }

    fn validate(&self, n: usize, m: usize, horizon: usize) -> Result<()> {
        let square = |mat: &DMatrix<f64>, dim: usize, what: &'static str| {
            if mat.nrows() != dim || mat.ncols() != dim {
                return Err(Error::dim(what, dim, mat.nrows().max(mat.ncols())));
            }
            if (mat - mat.transpose()).amax() > 1e-12 * mat.amax().max(1.0) {
                return Err(Error::InvalidConfig(format!("{what} must be symmetric")));
            }
            Ok(())
        };
        square(&self.state_weight, n, "state weight")?;
        square(&self.control_weight, m, "control weight")?;
        square(&self.terminal_weight, n, "terminal weight")?;
        if Cholesky::new(self.control_weight.clone()).is_none() {
            return Err(Error::InvalidConfig("control weight must be positive definite".into()));
        }
        match &self.reference {
            Reference::Fixed(g) if g.len() != n => Err(Error::dim("goal", n, g.len())),
            Reference::PerKnot(gs) if gs.len() != horizon + 1 => {
                Err(Error::dim("reference knots", horizon + 1, gs.len()))
            }
            Reference::PerKnot(gs) => match gs.iter().find(|g| g.len() != n) {
                Some(g) => Err(Error::dim("reference state", n, g.len())),
                None => Ok(()),
            },
            Reference::Fixed(_) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub model: DynamicsModel,
    pub cost: CostSpec,
    /// Number of knot intervals `N`; the trajectory has `N + 1` states.
    pub horizon: usize,
    pub dt: f64,
    pub start: DVector<f64>,
    /// Force the solver's model assumes, sampled at `t = k·dt` on knot `k`.
    pub force: ExternalForce,
}

impl ProblemSpec {
    pub fn new(
        model: DynamicsModel,
        cost: CostSpec,
        horizon: usize,
        dt: f64,
        start: DVector<f64>,
        force: ExternalForce,
    ) -> Result<Self> {
        let p = Self {
            model,
            cost,
            horizon,
            dt,
            start,
            force,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidConfig("horizon must be >= 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        let n = self.state_dim();
        if self.start.len() != n {
            return Err(Error::dim("start state", n, self.start.len()));
        }
        if self.force.dim() != self.model.force_dim() {
            return Err(Error::dim("assumed force", self.model.force_dim(), self.force.dim()));
        }
        self.cost.validate(n, self.control_dim(), self.horizon)
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.model.control_dim()
    }

    pub fn force_at_knot(&self, k: usize) -> DVector<f64> {
        self.force.at(k as f64 * self.dt)
    }

    /// Discrete dynamics `f(x_k, u_k, h)` at knot `k`.
    pub fn step(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        dynamics::step(&self.model, x, u, self.dt, &self.force_at_knot(k))
    }

    /// Stage-plus-terminal tracking cost `J(X, U)`.
    pub fn cost(&self, traj: &Trajectory) -> f64 {
        let quad = |w: &DMatrix<f64>, v: &DVector<f64>| 0.5 * v.dot(&(w * v));
        let mut j = 0.0;
        for k in 0..self.horizon {
            let dx = &traj.states[k] - self.cost.goal(k);
            j += quad(&self.cost.state_weight, &dx);
            j += quad(&self.cost.control_weight, &traj.controls[k]);
        }
        let dx = &traj.states[self.horizon] - self.cost.goal(self.horizon);
        j + quad(&self.cost.terminal_weight, &dx)
    }

    /// L1 norm of the initial-state defect and all dynamics defects.
    pub fn constraint_violation(&self, traj: &Trajectory) -> Result<f64> {
        let mut c = (&self.start - &traj.states[0]).lp_norm(1);
        for k in 0..self.horizon {
            let next = self.step(k, &traj.states[k], &traj.controls[k])?;
            c += (next - &traj.states[k + 1]).lp_norm(1);
        }
        Ok(c)
    }

    /// Trajectory obtained by rolling `controls` out from the start state.
    pub fn rollout(&self, controls: &[DVector<f64>]) -> Result<Trajectory> {
        if controls.len() != self.horizon {
            return Err(Error::dim("rollout controls", self.horizon, controls.len()));
        }
        let mut states = Vec::with_capacity(self.horizon + 1);
        states.push(self.start.clone());
        for (k, u) in controls.iter().enumerate() {
            let next = self.step(k, &states[k], u)?;
            states.push(next);
        }
        Ok(Trajectory {
            states,
            controls: controls.to_vec(),
        })
    }
}

/// States `x_0..x_N` and controls `u_0..u_{N-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn zeros(n: usize, m: usize, horizon: usize) -> Self {
        Self {
            states: vec![DVector::zeros(n); horizon + 1],
            controls: vec![DVector::zeros(m); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn check(&self, problem: &ProblemSpec) -> Result<()> {
        let (n, m, horizon) = (problem.state_dim(), problem.control_dim(), problem.horizon);
        if self.states.len() != horizon + 1 {
            return Err(Error::dim("trajectory states", horizon + 1, self.states.len()));
        }
        if self.controls.len() != horizon {
            return Err(Error::dim("trajectory controls", horizon, self.controls.len()));
        }
        if let Some(x) = self.states.iter().find(|x| x.len() != n) {
            return Err(Error::dim("trajectory state", n, x.len()));
        }
        if let Some(u) = self.controls.iter().find(|u| u.len() != m) {
            return Err(Error::dim("trajectory control", m, u.len()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.states
            .iter()
            .chain(&self.controls)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// `self + alpha · step`.
    pub fn stepped(&self, step: &StepDirection, alpha: f64) -> Trajectory {
        Trajectory {
            states: self
                .states
                .iter()
                .zip(&step.states)
                .map(|(x, dx)| x + dx * alpha)
                .collect(),
            controls: self
                .controls
                .iter()
                .zip(&step.controls)
                .map(|(u, du)| u + du * alpha)
                .collect(),
        }
    }
}

/// Diagonal damping added to the cost Hessian blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping {
    pub rho: f64,
    /// Also damp the control blocks `R_k`.
    pub controls: bool,
}

impl Damping {
    pub fn new(rho: f64) -> Self {
        Self { rho, controls: true }
    }
}

/// Linearized dynamics and quadratic cost at one knot `k < N`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotLinearization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// `e_k = f(x_k, u_k, h) − x_{k+1}`.
    pub defect: DVector<f64>,
    pub state_hessian: DMatrix<f64>,
    pub state_gradient: DVector<f64>,
    pub control_hessian: DMatrix<f64>,
    pub control_gradient: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub knots: Vec<KnotLinearization>,
    pub terminal_hessian: DMatrix<f64>,
    pub terminal_gradient: DVector<f64>,
    /// `x_s − x_0`.
    pub initial_defect: DVector<f64>,
}

impl Linearization {
    pub fn horizon(&self) -> usize {
        self.knots.len()
    }

    pub fn state_dim(&self) -> usize {
        self.initial_defect.len()
    }

    pub fn control_dim(&self) -> usize {
        self.knots.first().map_or(0, |k| k.b.ncols())
    }

    pub fn num_variables(&self) -> usize {
        let (n, m, horizon) = (self.state_dim(), self.control_dim(), self.horizon());
        (horizon + 1) * n + horizon * m
    }

    /// Hessian block for the state at knot `k`, including the terminal knot.
    pub fn state_hessian(&self, k: usize) -> &DMatrix<f64> {
        if k == self.horizon() {
            &self.terminal_hessian
        } else {
            &self.knots[k].state_hessian
        }
    }

    pub fn state_gradient(&self, k: usize) -> &DVector<f64> {
        if k == self.horizon() {
            &self.terminal_gradient
        } else {
            &self.knots[k].state_gradient
        }
    }

    /// L1 norm of the stacked constraint residual `c`.
    pub fn constraint_l1(&self) -> f64 {
        self.initial_defect.lp_norm(1)
            + self.knots.iter().map(|k| k.defect.lp_norm(1)).sum::<f64>()
    }
}

/// Builds the QP along `traj`, damping `Q_k` (and `R_k`) by `ρ I`.
pub fn linearize(problem: &ProblemSpec, traj: &Trajectory, damping: Damping) -> Result<Linearization> {
    traj.check(problem)?;
    if !(damping.rho >= 0.0) {
        return Err(Error::InvalidConfig(format!("rho must be >= 0, got {}", damping.rho)));
    }
    let (n, m) = (problem.state_dim(), problem.control_dim());
    let cost = &problem.cost;
    let eye_n = DMatrix::<f64>::identity(n, n);
    let eye_m = DMatrix::<f64>::identity(m, m);
    let q_reg = &cost.state_weight + &eye_n * damping.rho;
    let r_reg = if damping.controls {
        &cost.control_weight + &eye_m * damping.rho
    } else {
        cost.control_weight.clone()
    };

    let mut knots = Vec::with_capacity(problem.horizon);
    for k in 0..problem.horizon {
        let (x, u) = (&traj.states[k], &traj.controls[k]);
        let (next, a, b) =
            dynamics::step_with_jacobians(&problem.model, x, u, problem.dt, &problem.force_at_knot(k))?;
        knots.push(KnotLinearization {
            a,
            b,
            defect: next - &traj.states[k + 1],
            state_hessian: q_reg.clone(),
            state_gradient: &cost.state_weight * (x - cost.goal(k)),
            control_hessian: r_reg.clone(),
            control_gradient: &cost.control_weight * u,
        });
    }
    let last = &traj.states[problem.horizon];
    Ok(Linearization {
        knots,
        terminal_hessian: &cost.terminal_weight + &eye_n * damping.rho,
        terminal_gradient: &cost.terminal_weight * (last - cost.goal(problem.horizon)),
        initial_defect: &problem.start - &traj.states[0],
    })
}

/// Dense KKT data `G, g, C, c`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSystem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
}

impl KktSystem {
    pub fn matrix(&self) -> DMatrix<f64> {
        let nz = self.hessian.nrows();
        let nc = self.jacobian.nrows();
        let mut k = DMatrix::zeros(nz + nc, nz + nc);
        k.view_mut((0, 0), (nz, nz)).copy_from(&self.hessian);
        k.view_mut((nz, 0), (nc, nz)).copy_from(&self.jacobian);
        k.view_mut((0, nz), (nz, nc))
            .copy_from(&self.jacobian.transpose());
        k
    }

    /// Right-hand side `[g; −c]` paired with unknowns `[−δZ; λ]`. With this
    /// sign the step satisfies the linearized constraints `C δZ = c`.
    pub fn rhs(&self) -> DVector<f64> {
        let nz = self.gradient.len();
        let nc = self.residual.len();
        let mut r = DVector::zeros(nz + nc);
        r.rows_mut(0, nz).copy_from(&self.gradient);
        r.rows_mut(nz, nc).copy_from(&(-&self.residual));
        r
    }

    /// Direct LU solve; returns `(δZ, λ)`.
    pub fn solve(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        let nz = self.hessian.nrows();
        let nc = self.jacobian.nrows();
        let sol = self
            .matrix()
            .lu()
            .solve(&self.rhs())
            .ok_or(Error::Factorization {
                what: "KKT matrix",
                knot: 0,
            })?;
        Ok((-sol.rows(0, nz).into_owned(), sol.rows(nz, nc).into_owned()))
    }

    /// Max-abs residual of the KKT equations at `(δZ, λ)`.
    pub fn residual_norm(&self, dz: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        let r1 = -(&self.hessian * dz) + self.jacobian.transpose() * lambda - &self.gradient;
        let r2 = &self.jacobian * dz - &self.residual;
        r1.amax().max(r2.amax())
    }
}

pub fn form_kkt(lin: &Linearization) -> KktSystem {
    let (n, m, horizon) = (lin.state_dim(), lin.control_dim(), lin.horizon());
    let nz = lin.num_variables();
    let nc = (horizon + 1) * n;
    let stride = n + m;
    let mut hessian = DMatrix::zeros(nz, nz);
    let mut gradient = DVector::zeros(nz);
    let mut jacobian = DMatrix::zeros(nc, nz);
    let mut residual = DVector::zeros(nc);

    jacobian
        .view_mut((0, 0), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    residual.rows_mut(0, n).copy_from(&lin.initial_defect);
    for (k, knot) in lin.knots.iter().enumerate() {
        let xo = k * stride;
        let uo = xo + n;
        hessian.view_mut((xo, xo), (n, n)).copy_from(&knot.state_hessian);
        hessian.view_mut((uo, uo), (m, m)).copy_from(&knot.control_hessian);
        gradient.rows_mut(xo, n).copy_from(&knot.state_gradient);
        gradient.rows_mut(uo, m).copy_from(&knot.control_gradient);

        let row = (k + 1) * n;
        jacobian.view_mut((row, xo), (n, n)).copy_from(&(-&knot.a));
        jacobian.view_mut((row, uo), (n, m)).copy_from(&(-&knot.b));
        jacobian
            .view_mut((row, xo + stride), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        residual.rows_mut(row, n).copy_from(&knot.defect);
    }
    let xo = horizon * stride;
    hessian.view_mut((xo, xo), (n, n)).copy_from(&lin.terminal_hessian);
    gradient.rows_mut(xo, n).copy_from(&lin.terminal_gradient);

    KktSystem {
        hessian,
        gradient,
        jacobian,
        residual,
    }
}

/// Schur complement `S λ = γ` with intermediate blocks kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurSystem {
    pub s: BlockTriMatrix,
    pub gamma: DVector<f64>,
    pub theta: Vec<DMatrix<f64>>,
    pub phi: Vec<DMatrix<f64>>,
    pub zeta: Vec<DVector<f64>>,
    /// `Q_k⁻¹` for `k = 0..=N`.
    pub state_hessian_inv: Vec<DMatrix<f64>>,
    /// `R_k⁻¹` for `k = 0..N`.
    pub control_hessian_inv: Vec<DMatrix<f64>>,
    /// Damped `Q_0`, the corner block of the preconditioner.
    pub first_state_hessian: DMatrix<f64>,
}

fn spd_inverse(m: &DMatrix<f64>, what: &'static str, knot: usize) -> Result<DMatrix<f64>> {
    let inv = Cholesky::new(m.clone())
        .ok_or(Error::Factorization { what, knot })?
        .inverse();
    Ok(symmetrize(inv))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn form_schur(lin: &Linearization) -> Result<SchurSystem> {
    let horizon = lin.horizon();
    let n = lin.state_dim();
    let q_inv = (0..=horizon)
        .map(|k| spd_inverse(lin.state_hessian(k), "state Hessian", k))
        .collect::<Result<Vec<_>>>()?;
    let r_inv = lin
        .knots
        .iter()
        .enumerate()
        .map(|(k, kn)| spd_inverse(&kn.control_hessian, "control Hessian", k))
        .collect::<Result<Vec<_>>>()?;

    let mut theta = Vec::with_capacity(horizon);
    let mut phi = Vec::with_capacity(horizon);
    let mut zeta = Vec::with_capacity(horizon);
    for (k, kn) in lin.knots.iter().enumerate() {
        let aq = &kn.a * &q_inv[k];
        let br = &kn.b * &r_inv[k];
        let t = &aq * kn.a.transpose() + &br * kn.b.transpose() + &q_inv[k + 1];
        theta.push(symmetrize(t));
        zeta.push(-(&aq * &kn.state_gradient) - &br * &kn.control_gradient
            + &q_inv[k + 1] * lin.state_gradient(k + 1));
        phi.push(-aq);
    }

    let mut diag = Vec::with_capacity(horizon + 1);
    diag.push(q_inv[0].clone());
    diag.extend(theta.iter().cloned());
    let s = BlockTriMatrix::from_blocks(&diag, &phi)?;

    let mut gamma = DVector::zeros((horizon + 1) * n);
    gamma
        .rows_mut(0, n)
        .copy_from(&(&lin.initial_defect + &q_inv[0] * lin.state_gradient(0)));
    for (k, kn) in lin.knots.iter().enumerate() {
        gamma
            .rows_mut((k + 1) * n, n)
            .copy_from(&(&kn.defect + &zeta[k]));
    }

    Ok(SchurSystem {
        s,
        gamma,
        theta,
        phi,
        zeta,
        state_hessian_inv: q_inv,
        control_hessian_inv: r_inv,
        first_state_hessian: lin.state_hessian(0).clone(),
    })
}

/// Symmetric stair preconditioner: diagonal blocks `(Q_0, θ_0⁻¹, θ_1⁻¹, …)`
/// and sub-diagonal blocks `−θ_k⁻¹ φ_k D_k` where `D_k` is the preceding
/// diagonal block.
pub fn form_preconditioner(sys: &SchurSystem) -> Result<BlockTriMatrix> {
    let mut diag = Vec::with_capacity(sys.theta.len() + 1);
    diag.push(sys.first_state_hessian.clone());
    for (k, t) in sys.theta.iter().enumerate() {
        diag.push(spd_inverse(t, "theta block", k)?);
    }
    let lower: Vec<_> = sys
        .phi
        .iter()
        .enumerate()
        .map(|(k, phi)| -(&diag[k + 1] * phi * &diag[k]))
        .collect();
    BlockTriMatrix::from_blocks(&diag, &lower)
}

/// Per-knot step `δx_k, δu_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDirection {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
}

impl StepDirection {
    pub fn inf_norm(&self) -> f64 {
        self.states
            .iter()
            .chain(&self.controls)
            .map(|v| v.amax())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.inf_norm() == 0.0
    }

    /// Stacked `δZ` in knot order.
    pub fn stacked(&self) -> DVector<f64> {
        let mut out = Vec::new();
        for (k, x) in self.states.iter().enumerate() {
            out.extend_from_slice(x.as_slice());
            if let Some(u) = self.controls.get(k) {
                out.extend_from_slice(u.as_slice());
            }
        }
        DVector::from_vec(out)
    }

    pub fn from_stacked(dz: &DVector<f64>, n: usize, m: usize, horizon: usize) -> Self {
        let stride = n + m;
        Self {
            states: (0..=horizon).map(|k| dz.rows(k * stride, n).into_owned()).collect(),
            controls: (0..horizon)
                .map(|k| dz.rows(k * stride + n, m).into_owned())
                .collect(),
        }
    }
}

/// Back-substitutes `δZ = −G⁻¹(g − Cᵀλ)` one knot at a time.
pub fn recover_step(sys: &SchurSystem, lin: &Linearization, lambda: &DVector<f64>) -> Result<StepDirection> {
    let (n, horizon) = (lin.state_dim(), lin.horizon());
    if lambda.len() != (horizon + 1) * n {
        return Err(Error::dim("multiplier vector", (horizon + 1) * n, lambda.len()));
    }
    let lam = |k: usize| lambda.rows(k * n, n);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    for (k, kn) in lin.knots.iter().enumerate() {
        let next = lam(k + 1);
        let gx = &kn.state_gradient - lam(k) + kn.a.transpose() * next;
        let gu = &kn.control_gradient + kn.b.transpose() * next;
        states.push(-(&sys.state_hessian_inv[k] * gx));
        controls.push(-(&sys.control_hessian_inv[k] * gu));
    }
    let gx = &lin.terminal_gradient - lam(horizon);
    states.push(-(&sys.state_hessian_inv[horizon] * gx));
    Ok(StepDirection { states, controls })
}
