//! Continuous-time models, their RK4 discretization and exact step Jacobians.
//!
//! Each model exposes `ẋ = f_c(x, u, f_ext)`. The solver's discrete map is a
//! single RK4 step of `f_c`; its Jacobians are propagated through the four
//! stages. Stage Jacobians of `f_c` come from forward-mode dual numbers, so
//! they are exact to rounding.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar arithmetic the model equations are written against.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// First-order dual number `re + du·ε`, `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub du: f64,
}

impl Dual {
    pub fn new(re: f64, du: f64) -> Self {
        Self { re, du }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.du + o.du)
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.du - o.du)
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.re * o.du + self.du * o.re)
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Dual::new(
            self.re / o.re,
            (self.du * o.re - self.re * o.du) / (o.re * o.re),
        )
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.du)
    }
}

impl Real for Dual {
    fn cst(v: f64) -> Self {
        Dual::new(v, 0.0)
    }
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.re.cos() * self.du)
    }
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -self.re.sin() * self.du)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleIntegrator {
    /// Number of translational axes `d`; the state is `[p; v]` of size `2d`.
    pub dim: usize,
    pub mass: f64,
}

impl Default for DoubleIntegrator {
    fn default() -> Self {
        Self { dim: 1, mass: 1.0 }
    }
}

/// Damped point-mass pendulum; `θ = 0` hangs straight down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pendulum {
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
    pub gravity: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            damping: 0.1,
            gravity: 9.81,
        }
    }
}

/// Cart with a point-mass pole; state `[p, θ, ṗ, θ̇]`, `θ = 0` hanging down.
/// The external force is `[cart force, pole torque]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartPole {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.3,
            pole_length: 0.5,
            gravity: 9.81,
        }
    }
}

/// Planar two-link arm in a vertical plane with point masses at the link
/// tips. Joint angles are measured from the downward vertical, so `q = 0`
/// hangs at rest. The external force is a Cartesian tip force `[Fx, Fy]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLinkArm {
    pub masses: [f64; 2],
    pub lengths: [f64; 2],
    pub damping: f64,
    pub gravity: f64,
}

impl Default for TwoLinkArm {
    fn default() -> Self {
        Self {
            masses: [1.0, 1.0],
            lengths: [0.5, 0.5],
            damping: 0.1,
            gravity: 9.81,
        }
    }
}

impl TwoLinkArm {
    pub fn tip_position(&self, q1: f64, q2: f64) -> [f64; 2] {
        let [l1, l2] = self.lengths;
        [
            l1 * q1.sin() + l2 * (q1 + q2).sin(),
            -l1 * q1.cos() - l2 * (q1 + q2).cos(),
        ]
    }

    /// Closed-form inverse kinematics, elbow branch selected by `elbow_sign`.
    pub fn inverse_kinematics(&self, target: [f64; 2], elbow_sign: f64) -> Option<[f64; 2]> {
        let [l1, l2] = self.lengths;
        let [x, y] = target;
        let r2 = x * x + y * y;
        let c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
        if !(-1.0..=1.0).contains(&c2) {
            return None;
        }
        let q2 = elbow_sign.signum() * c2.acos();
        // tip = l1·(s1, -c1) + l2·(s12, -c12); rotate so that the downward
        // vertical is the reference axis
        let q1 = x.atan2(-y) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
        Some([q1, q2])
    }
}

/// Continuous-time linear system `ẋ = A x + B (u + f)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSystem {
    pub state_dim: usize,
    pub control_dim: usize,
    /// Row-major `n × n`.
    pub a: Vec<f64>,
    /// Row-major `n × m`.
    pub b: Vec<f64>,
}

impl LinearSystem {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::dim("linear system A columns", a.nrows(), a.ncols()));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::dim("linear system B rows", a.nrows(), b.nrows()));
        }
        let row_major = |m: &DMatrix<f64>| {
            let mut v = Vec::with_capacity(m.len());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    v.push(m[(i, j)]);
                }
            }
            v
        };
        Ok(Self {
            state_dim: a.nrows(),
            control_dim: b.ncols(),
            a: row_major(a),
            b: row_major(b),
        })
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.state_dim, self.state_dim, &self.a)
    }

    pub fn b_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.state_dim, self.control_dim, &self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DynamicsModel {
    DoubleIntegrator(DoubleIntegrator),
    Pendulum(Pendulum),
    CartPole(CartPole),
    TwoLinkArm(TwoLinkArm),
    Linear(LinearSystem),
}

impl DynamicsModel {
    pub fn name(&self) -> &'static str {
        match self {
            DynamicsModel::DoubleIntegrator(_) => "double_integrator",
            DynamicsModel::Pendulum(_) => "pendulum",
            DynamicsModel::CartPole(_) => "cartpole",
            DynamicsModel::TwoLinkArm(_) => "two_link_arm",
            DynamicsModel::Linear(_) => "linear",
        }
    }

    /// Model with default parameters by name, as used in configuration files.
    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "double_integrator" => DynamicsModel::DoubleIntegrator(DoubleIntegrator::default()),
            "pendulum" => DynamicsModel::Pendulum(Pendulum::default()),
            "cartpole" => DynamicsModel::CartPole(CartPole::default()),
            "two_link_arm" => DynamicsModel::TwoLinkArm(TwoLinkArm::default()),
            _ => return None,
        })
    }

    pub fn state_dim(&self) -> usize {
        match self {
            DynamicsModel::DoubleIntegrator(m) => 2 * m.dim,
            DynamicsModel::Pendulum(_) => 2,
            DynamicsModel::CartPole(_) => 4,
            DynamicsModel::TwoLinkArm(_) => 4,
            DynamicsModel::Linear(m) => m.state_dim,
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            DynamicsModel::DoubleIntegrator(m) => m.dim,
            DynamicsModel::Pendulum(_) => 1,
            DynamicsModel::CartPole(_) => 1,
            DynamicsModel::TwoLinkArm(_) => 2,
            DynamicsModel::Linear(m) => m.control_dim,
        }
    }

    /// Dimension of the external force input.
    pub fn force_dim(&self) -> usize {
        match self {
            DynamicsModel::DoubleIntegrator(m) => m.dim,
            DynamicsModel::Pendulum(_) => 1,
            DynamicsModel::CartPole(_) => 2,
            DynamicsModel::TwoLinkArm(_) => 2,
            DynamicsModel::Linear(m) => m.control_dim,
        }
    }

    /// Continuous-time state derivative.
    pub fn derivative<T: Real>(&self, x: &[T], u: &[T], f: &[f64]) -> Vec<T> {
        match self {
            DynamicsModel::DoubleIntegrator(m) => {
                let d = m.dim;
                let mut out = Vec::with_capacity(2 * d);
                out.extend_from_slice(&x[d..2 * d]);
                for i in 0..d {
                    out.push(u[i] + T::cst(f[i] / m.mass));
                }
                out
            }
            DynamicsModel::Pendulum(p) => {
                let ml2 = p.mass * p.length * p.length;
                let acc = (u[0] + T::cst(f[0])
                    - T::cst(p.damping) * x[1]
                    - T::cst(p.mass * p.gravity * p.length) * x[0].sin())
                    / T::cst(ml2);
                vec![x[1], acc]
            }
            DynamicsModel::CartPole(c) => {
                let mp = c.pole_mass;
                let l = c.pole_length;
                let (s, co) = (x[1].sin(), x[1].cos());
                let m11 = T::cst(c.cart_mass + mp);
                let m12 = T::cst(mp * l) * co;
                let m22 = T::cst(mp * l * l);
                let rhs1 = u[0] + T::cst(f[0]) + T::cst(mp * l) * s * x[3] * x[3];
                let rhs2 = T::cst(f[1]) - T::cst(mp * c.gravity * l) * s;
                let det = m11 * m22 - m12 * m12;
                let pdd = (m22 * rhs1 - m12 * rhs2) / det;
                let tdd = (m11 * rhs2 - m12 * rhs1) / det;
                vec![x[2], x[3], pdd, tdd]
            }
            DynamicsModel::TwoLinkArm(a) => {
                let [m1, m2] = a.masses;
                let [l1, l2] = a.lengths;
                let g = a.gravity;
                let (q1, q2, w1, w2) = (x[0], x[1], x[2], x[3]);
                let (s1, c1) = (q1.sin(), q1.cos());
                let (s2, c2) = (q2.sin(), q2.cos());
                let s12 = (q1 + q2).sin();
                let c12 = (q1 + q2).cos();
                let m11 = T::cst((m1 + m2) * l1 * l1 + m2 * l2 * l2)
                    + T::cst(2.0 * m2 * l1 * l2) * c2;
                let m12 = T::cst(m2 * l2 * l2) + T::cst(m2 * l1 * l2) * c2;
                let m22 = T::cst(m2 * l2 * l2);
                let hcor = T::cst(m2 * l1 * l2) * s2;
                let cor1 = -hcor * (T::cst(2.0) * w1 * w2 + w2 * w2);
                let cor2 = hcor * w1 * w1;
                let g1 = T::cst((m1 + m2) * g * l1) * s1 + T::cst(m2 * g * l2) * s12;
                let g2 = T::cst(m2 * g * l2) * s12;
                let (fx, fy) = (T::cst(f[0]), T::cst(f[1]));
                let ext1 = (T::cst(l1) * c1 + T::cst(l2) * c12) * fx
                    + (T::cst(l1) * s1 + T::cst(l2) * s12) * fy;
                let ext2 = T::cst(l2) * c12 * fx + T::cst(l2) * s12 * fy;
                let b = T::cst(a.damping);
                let t1 = u[0] + ext1 - b * w1 - cor1 - g1;
                let t2 = u[1] + ext2 - b * w2 - cor2 - g2;
                let det = m11 * m22 - m12 * m12;
                let a1 = (m22 * t1 - m12 * t2) / det;
                let a2 = (m11 * t2 - m12 * t1) / det;
                vec![w1, w2, a1, a2]
            }
            DynamicsModel::Linear(l) => {
                let (n, m) = (l.state_dim, l.control_dim);
                (0..n)
                    .map(|i| {
                        let mut acc = T::cst(0.0);
                        for j in 0..n {
                            acc = acc + T::cst(l.a[i * n + j]) * x[j];
                        }
                        for j in 0..m {
                            acc = acc + T::cst(l.b[i * m + j]) * (u[j] + T::cst(f[j]));
                        }
                        acc
                    })
                    .collect()
            }
        }
    }

    /// Task-space position used for tracking metrics: the tip for the arm,
    /// the generalized coordinates otherwise.
    pub fn task_position(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            DynamicsModel::TwoLinkArm(a) => {
                DVector::from_row_slice(&a.tip_position(x[0], x[1]))
            }
            DynamicsModel::Linear(_) => x.clone(),
            _ => x.rows(0, self.state_dim() / 2).into_owned(),
        }
    }

    /// Generalized velocities (second half of a mechanical state).
    pub fn velocities(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            DynamicsModel::Linear(_) => x.clone(),
            _ => {
                let h = self.state_dim() / 2;
                x.rows(h, h).into_owned()
            }
        }
    }

    fn check(&self, x: &DVector<f64>, u: &DVector<f64>, f: &DVector<f64>) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::dim("state", self.state_dim(), x.len()));
        }
        if u.len() != self.control_dim() {
            return Err(Error::dim("control", self.control_dim(), u.len()));
        }
        if f.len() != self.force_dim() {
            return Err(Error::dim("external force", self.force_dim(), f.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control"));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("external force"));
        }
        Ok(())
    }

    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.derivative(x.as_slice(), u.as_slice(), f.as_slice()))
    }

    /// Jacobians `(∂f_c/∂x, ∂f_c/∂u)` of the continuous dynamics.
    pub fn continuous_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        f: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let (n, m) = (self.state_dim(), self.control_dim());
        let mut fx = DMatrix::zeros(n, n);
        let mut fu = DMatrix::zeros(n, m);
        let xd: Vec<Dual> = x.iter().map(|&v| Dual::cst(v)).collect();
        let ud: Vec<Dual> = u.iter().map(|&v| Dual::cst(v)).collect();
        for j in 0..n + m {
            let mut xs = xd.clone();
            let mut us = ud.clone();
            if j < n {
                xs[j].du = 1.0;
            } else {
                us[j - n].du = 1.0;
            }
            let out = self.derivative(&xs, &us, f.as_slice());
            for i in 0..n {
                if j < n {
                    fx[(i, j)] = out[i].du;
                } else {
                    fu[(i, j - n)] = out[i].du;
                }
            }
        }
        (fx, fu)
    }
}

/// Value of a time-varying force profile at time `t`.
pub type ForceFn = dyn Fn(f64) -> DVector<f64> + Send + Sync;

/// `offset + amplitude · exp(−decay·t) · cos(ω t + phase)`, componentwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayingSinusoid {
    pub offset: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub omega: f64,
    pub phase: f64,
    pub decay: f64,
}

impl DecayingSinusoid {
    pub fn value(&self, t: f64) -> DVector<f64> {
        let env = (-self.decay * t).exp() * (self.omega * t + self.phase).cos();
        DVector::from_iterator(
            self.offset.len(),
            self.offset
                .iter()
                .zip(&self.amplitude)
                .map(|(o, a)| o + a * env),
        )
    }
}

#[derive(Clone)]
pub enum ExternalForce {
    Constant(DVector<f64>),
    DecayingSinusoid(DecayingSinusoid),
    Custom { dim: usize, profile: Arc<ForceFn> },
}

impl ExternalForce {
    pub fn zero(dim: usize) -> Self {
        ExternalForce::Constant(DVector::zeros(dim))
    }

    pub fn constant(values: &[f64]) -> Self {
        ExternalForce::Constant(DVector::from_row_slice(values))
    }

    pub fn custom<F>(dim: usize, profile: F) -> Self
    where
        F: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        ExternalForce::Custom {
            dim,
            profile: Arc::new(profile),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ExternalForce::Constant(v) => v.len(),
            ExternalForce::DecayingSinusoid(s) => s.offset.len(),
            ExternalForce::Custom { dim, .. } => *dim,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ExternalForce::Constant(_))
    }

    pub fn at(&self, t: f64) -> DVector<f64> {
        match self {
            ExternalForce::Constant(v) => v.clone(),
            ExternalForce::DecayingSinusoid(s) => s.value(t),
            ExternalForce::Custom { profile, .. } => profile(t),
        }
    }
}

impl fmt::Debug for ExternalForce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExternalForce::Constant(v) => f.debug_tuple("Constant").field(&v.as_slice()).finish(),
            ExternalForce::DecayingSinusoid(s) => f.debug_tuple("DecayingSinusoid").field(s).finish(),
            ExternalForce::Custom { dim, .. } => {
                f.debug_struct("Custom").field("dim", dim).finish_non_exhaustive()
            }
        }
    }
}

impl PartialEq for ExternalForce {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ExternalForce::Constant(a), ExternalForce::Constant(b)) => a == b,
            (ExternalForce::DecayingSinusoid(a), ExternalForce::DecayingSinusoid(b)) => a == b,
            (
                ExternalForce::Custom { dim: da, profile: pa },
                ExternalForce::Custom { dim: db, profile: pb },
            ) => da == db && Arc::ptr_eq(pa, pb),
            _ => false,
        }
    }
}

/// Plant integrator configuration. The scheme is always RK4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub substep: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self { substep: 1e-3 }
    }
}

impl PlantConfig {
    /// Number of substeps in `period`; the period must be an integer
    /// multiple of the substep.
    pub fn substeps(&self, period: f64) -> Result<usize> {
        if !(self.substep > 0.0) || !(period > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "plant substep {} and control period {period} must be positive",
                self.substep
            )));
        }
        let ratio = period / self.substep;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "control period {period} is not a multiple of plant substep {}",
                self.substep
            )));
        }
        Ok(k as usize)
    }
}

fn axpy(x: &DVector<f64>, a: f64, k: &DVector<f64>) -> DVector<f64> {
    x + k * a
}

fn rk4(
    model: &DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    f: &DVector<f64>,
) -> DVector<f64> {
    let k1 = model.eval(x, u, f);
    let k2 = model.eval(&axpy(x, 0.5 * h, &k1), u, f);
    let k3 = model.eval(&axpy(x, 0.5 * h, &k2), u, f);
    let k4 = model.eval(&axpy(x, h, &k3), u, f);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// One RK4 step of duration `h` with `u` and `force` held constant.
pub fn step(
    model: &DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    force: &DVector<f64>,
) -> Result<DVector<f64>> {
    model.check(x, u, force)?;
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("timestep must be positive, got {h}")));
    }
    Ok(rk4(model, x, u, h, force))
}

/// Exact Jacobians `(A, B)` of the RK4 step map.
pub fn step_jacobians(
    model: &DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    force: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (_, a, b) = step_with_jacobians(model, x, u, h, force)?;
    Ok((a, b))
}

/// RK4 step together with the Jacobians of the step map.
pub fn step_with_jacobians(
    model: &DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
    force: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    model.check(x, u, force)?;
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("timestep must be positive, got {h}")));
    }
    let n = model.state_dim();
    let eye = DMatrix::<f64>::identity(n, n);

    // stage k_i = f(x_i, u) with x_1 = x, x_{i+1} = x + c_i h k_i
    let k1 = model.eval(x, u, force);
    let (j1x, j1u) = model.continuous_jacobians(x, u, force);
    let k1x = j1x;
    let k1u = j1u;

    let x2 = axpy(x, 0.5 * h, &k1);
    let k2 = model.eval(&x2, u, force);
    let (j2x, j2u) = model.continuous_jacobians(&x2, u, force);
    let k2x = &j2x * (&eye + &k1x * (0.5 * h));
    let k2u = &j2x * (&k1u * (0.5 * h)) + j2u;

    let x3 = axpy(x, 0.5 * h, &k2);
    let k3 = model.eval(&x3, u, force);
    let (j3x, j3u) = model.continuous_jacobians(&x3, u, force);
    let k3x = &j3x * (&eye + &k2x * (0.5 * h));
    let k3u = &j3x * (&k2u * (0.5 * h)) + j3u;

    let x4 = axpy(x, h, &k3);
    let k4 = model.eval(&x4, u, force);
    let (j4x, j4u) = model.continuous_jacobians(&x4, u, force);
    let k4x = &j4x * (&eye + &k3x * h);
    let k4u = &j4x * (&k3u * h) + j4u;

    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    let a = eye + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
    let b = (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * (h / 6.0);
    Ok((next, a, b))
}

/// Integrates the plant over one control period in RK4 substeps with the
/// control held. A time-varying force is sampled at each substep start,
/// with `t0` the absolute time at the beginning of the period.
pub fn simulate_plant(
    model: &DynamicsModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    control_period: f64,
    cfg: &PlantConfig,
    force: &ExternalForce,
    t0: f64,
) -> Result<DVector<f64>> {
    let substeps = cfg.substeps(control_period)?;
    let h = control_period / substeps as f64;
    let mut state = x.clone();
    for i in 0..substeps {
        let f = force.at(t0 + i as f64 * h);
        state = step(model, &state, u, h, &f)?;
    }
    Ok(state)
}
