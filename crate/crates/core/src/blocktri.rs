//! Symmetric block-tridiagonal matrices and the PCG solver that consumes them.
//!
//! Blocks are packed knot by knot in row-major order: `diag` holds the
//! `n_blockrows` diagonal blocks back to back, `lower` holds the
//! `n_blockrows - 1` sub-diagonal blocks. The block at `(k + 1, k)` lives in
//! `lower[k]`; its transpose is the super-diagonal block `(k, k + 1)` and is
//! never stored.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockTriMatrix {
    n_blockrows: usize,
    block_dim: usize,
    diag: Vec<f64>,
    lower: Vec<f64>,
}

impl BlockTriMatrix {
    /// Builds from dense blocks. `lower[k]` is the block at `(k + 1, k)`.
    pub fn from_blocks(diag: &[DMatrix<f64>], lower: &[DMatrix<f64>]) -> Result<Self> {
        let n_blockrows = diag.len();
        if n_blockrows == 0 {
            return Err(Error::InvalidConfig(
                "block-tridiagonal matrix needs at least one block row".into(),
            ));
        }
        if lower.len() + 1 != n_blockrows {
            return Err(Error::dim("off-diagonal block count", n_blockrows - 1, lower.len()));
        }
        let block_dim = diag[0].nrows();
        let bb = block_dim * block_dim;
        let mut out = Self {
            n_blockrows,
            block_dim,
            diag: Vec::with_capacity(n_blockrows * bb),
            lower: Vec::with_capacity((n_blockrows - 1) * bb),
        };
        for d in diag {
            check_square(d, block_dim)?;
            push_row_major(&mut out.diag, d);
        }
        for l in lower {
            check_square(l, block_dim)?;
            push_row_major(&mut out.lower, l);
        }
        Ok(out)
    }

    pub fn identity(n_blockrows: usize, block_dim: usize) -> Self {
        let bb = block_dim * block_dim;
        let mut diag = vec![0.0; n_blockrows * bb];
        for k in 0..n_blockrows {
            for i in 0..block_dim {
                diag[k * bb + i * block_dim + i] = 1.0;
            }
        }
        Self {
            n_blockrows,
            block_dim,
            diag,
            lower: vec![0.0; n_blockrows.saturating_sub(1) * bb],
        }
    }

    pub fn n_blockrows(&self) -> usize {
        self.n_blockrows
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    /// Total number of scalar rows.
    pub fn dim(&self) -> usize {
        self.n_blockrows * self.block_dim
    }

    pub fn diag_block(&self, k: usize) -> DMatrix<f64> {
        let bb = self.block_dim * self.block_dim;
        DMatrix::from_row_slice(
            self.block_dim,
            self.block_dim,
            &self.diag[k * bb..(k + 1) * bb],
        )
    }

    /// Block at `(k + 1, k)`.
    pub fn lower_block(&self, k: usize) -> DMatrix<f64> {
        let bb = self.block_dim * self.block_dim;
        DMatrix::from_row_slice(
            self.block_dim,
            self.block_dim,
            &self.lower[k * bb..(k + 1) * bb],
        )
    }

    /// Raw row-major packing of the diagonal blocks.
    pub fn diag_data(&self) -> &[f64] {
        &self.diag
    }

    /// Raw row-major packing of the sub-diagonal blocks.
    pub fn lower_data(&self) -> &[f64] {
        &self.lower
    }

    pub fn is_block_diagonal(&self) -> bool {
        self.lower.iter().all(|&v| v == 0.0)
    }

    /// Full dense symmetric matrix.
    pub fn densify(&self) -> DMatrix<f64> {
        let d = self.block_dim;
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for k in 0..self.n_blockrows {
            m.view_mut((k * d, k * d), (d, d))
                .copy_from(&self.diag_block(k));
        }
        for k in 0..self.n_blockrows.saturating_sub(1) {
            let l = self.lower_block(k);
            m.view_mut(((k + 1) * d, k * d), (d, d)).copy_from(&l);
            m.view_mut((k * d, (k + 1) * d), (d, d))
                .copy_from(&l.transpose());
        }
        m
    }

    /// Block-tridiagonal matrix-vector product.
    ///
    /// Each output block accumulates the diagonal term, then the
    /// sub-diagonal term, then the super-diagonal term, in that order.
    pub fn btmv(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(Error::dim("btmv vector", self.dim(), v.len()));
        }
        let mut out = DVector::zeros(self.dim());
        self.btmv_into(v.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    pub(crate) fn btmv_into(&self, v: &[f64], out: &mut [f64]) {
        let d = self.block_dim;
        let bb = d * d;
        let nb = self.n_blockrows;
        for k in 0..nb {
            let diag = &self.diag[k * bb..(k + 1) * bb];
            let vk = &v[k * d..(k + 1) * d];
            let below = (k > 0).then(|| (&self.lower[(k - 1) * bb..k * bb], &v[(k - 1) * d..k * d]));
            // the block above the diagonal is the transpose of lower[k]
            let above = (k + 1 < nb).then(|| (&self.lower[k * bb..(k + 1) * bb], &v[(k + 1) * d..(k + 2) * d]));
            for (i, o) in out[k * d..(k + 1) * d].iter_mut().enumerate() {
                let mut acc = 0.0;
                for (a, b) in diag[i * d..(i + 1) * d].iter().zip(vk) {
                    acc += a * b;
                }
                if let Some((sub, vp)) = below {
                    for (a, b) in sub[i * d..(i + 1) * d].iter().zip(vp) {
                        acc += a * b;
                    }
                }
                if let Some((sup, vn)) = above {
                    for (j, b) in vn.iter().enumerate() {
                        acc += sup[j * d + i] * b;
                    }
                }
                *o = acc;
            }
        }
    }

    fn check_compatible(&self, other: &Self, what: &'static str) -> Result<()> {
        if self.n_blockrows != other.n_blockrows {
            return Err(Error::dim(what, self.n_blockrows, other.n_blockrows));
        }
        if self.block_dim != other.block_dim {
            return Err(Error::dim(what, self.block_dim, other.block_dim));
        }
        Ok(())
    }
}

fn check_square(m: &DMatrix<f64>, dim: usize) -> Result<()> {
    if m.nrows() != dim {
        return Err(Error::dim("block rows", dim, m.nrows()));
    }
    if m.ncols() != dim {
        return Err(Error::dim("block columns", dim, m.ncols()));
    }
    Ok(())
}

fn push_row_major(buf: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.push(m[(i, j)]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcgSettings {
    /// Absolute threshold on the true residual norm.
    pub tolerance: f64,
    /// `None` means `10 * n_blockrows * block_dim`.
    pub max_iterations: Option<usize>,
}

impl Default for PcgSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: None,
        }
    }
}

impl PcgSettings {
    pub fn new(tolerance: f64, max_iterations: usize) -> Self {
        Self {
            tolerance,
            max_iterations: Some(max_iterations),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "pcg tolerance must be >= 0, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::InvalidConfig("pcg max_iterations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn iteration_cap(&self, unknowns: usize) -> usize {
        self.max_iterations.unwrap_or(10 * unknowns).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgResult {
    pub solution: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual_norm: f64,
}

/// Ratio of recurrence to true residual norm below which the recurrence
/// residual is replaced by the true one.
const RESIDUAL_REPLACEMENT: f64 = 1e-3;

/// Solves `S x = rhs` by preconditioned conjugate gradients from a zero
/// initial guess, applying `precond` as the approximate inverse of `S`.
///
/// Convergence is tested on the recomputed residual `‖rhs − S x‖₂`.
pub fn pcg(
    s: &BlockTriMatrix,
    rhs: &DVector<f64>,
    precond: &BlockTriMatrix,
    settings: &PcgSettings,
) -> Result<PcgResult> {
    settings.validate()?;
    s.check_compatible(precond, "preconditioner shape")?;
    let dim = s.dim();
    if rhs.len() != dim {
        return Err(Error::dim("pcg right-hand side", dim, rhs.len()));
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pcg right-hand side"));
    }
    let cap = settings.iteration_cap(dim);
    let tol = settings.tolerance;
    let b = rhs.as_slice();

    let mut x = vec![0.0; dim];
    let mut r = b.to_vec();
    let mut z = vec![0.0; dim];
    let mut sp = vec![0.0; dim];
    let mut sx = vec![0.0; dim];

    let mut residual = norm(&r);
    if residual <= tol {
        return Ok(PcgResult {
            solution: DVector::from_vec(x),
            iterations: 0,
            converged: true,
            final_residual_norm: residual,
        });
    }

    precond.btmv_into(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    if !(rz > 0.0) {
        return Err(Error::PcgBreakdown { iteration: 0 });
    }

    let mut iterations = 0;
    for it in 1..=cap {
        iterations = it;
        s.btmv_into(&p, &mut sp);
        let curvature = dot(&p, &sp);
        if !(curvature > 0.0) || !curvature.is_finite() {
            if norm(&p) == 0.0 {
                // the direction underflowed: no further progress is possible
                break;
            }
            return Err(Error::PcgBreakdown { iteration: it });
        }
        let alpha = rz / curvature;
        for i in 0..dim {
            x[i] += alpha * p[i];
            r[i] -= alpha * sp[i];
        }

        s.btmv_into(&x, &mut sx);
        for (si, bi) in sx.iter_mut().zip(b) {
            *si = bi - *si;
        }
        residual = norm(&sx);
        if residual <= tol {
            return Ok(PcgResult {
                solution: DVector::from_vec(x),
                iterations: it,
                converged: true,
                final_residual_norm: residual,
            });
        }

        // The recurrence residual drifts from the true one once it nears
        // the attainable accuracy; replace it and restart the directions.
        let restart = norm(&r) < RESIDUAL_REPLACEMENT * residual;
        if restart {
            r.copy_from_slice(&sx);
        }
        precond.btmv_into(&r, &mut z);
        let rz_next = dot(&r, &z);
        if !(rz_next > 0.0) {
            // r == 0 in floating point: the recurrence cannot make progress
            if norm(&r) == 0.0 {
                break;
            }
            return Err(Error::PcgBreakdown { iteration: it });
        }
        let beta = if restart { 0.0 } else { rz_next / rz };
        rz = rz_next;
        for i in 0..dim {
            p[i] = z[i] + beta * p[i];
        }
    }

    Ok(PcgResult {
        solution: DVector::from_vec(x),
        iterations,
        converged: false,
        final_residual_norm: residual,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
