//! Dense matrix helpers and the two fixed-point Riccati solvers.
//!
//! Both solvers iterate their Riccati map until the largest entry-wise change
//! drops below [`RICCATI_REL_TOL`] relative to the iterate, giving up after
//! [`RICCATI_MAX_ITER`] sweeps.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::plant::SystemMatrices;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub const RICCATI_REL_TOL: f64 = 1e-12;
pub const RICCATI_MAX_ITER: usize = 100_000;

/// Tolerance used when checking symmetry / positive semidefiniteness.
pub const PSD_TOL: f64 = 1e-9;

/// `(P + Pᵀ) / 2`.
pub fn symmetrize(p: &Matrix) -> Matrix {
    (p + p.transpose()) * 0.5
}

/// Largest absolute entry.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn is_symmetric(p: &Matrix, tol: f64) -> bool {
    p.is_square() && max_abs(&(p - p.transpose())) <= tol
}

/// Symmetric with smallest eigenvalue at least `-tol`.
pub fn is_symmetric_psd(p: &Matrix, tol: f64) -> bool {
    if !is_symmetric(p, tol) {
        return false;
    }
    if p.nrows() == 0 {
        return true;
    }
    let eig = symmetrize(p).symmetric_eigenvalues();
    eig.iter().all(|&l| l >= -tol)
}

/// `M^k` by repeated squaring.
pub fn mat_pow(m: &Matrix, mut k: usize) -> Matrix {
    let n = m.nrows();
    let mut result = Matrix::identity(n, n);
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Block-diagonal matrix from the given blocks (blocks need not be square).
pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Solves `S X = B` for symmetric positive definite `S` via Cholesky.
pub(crate) fn spd_solve(s: &Matrix, b: &Matrix, what: &str) -> Result<Matrix> {
    let chol = symmetrize(s)
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))?;
    Ok(chol.solve(b))
}

fn check_square(m: &Matrix, name: &str) -> Result<usize> {
    if !m.is_square() {
        return Err(dim_err(format!(
            "{name} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Infinite-horizon discrete LQR gain `F` for `x⁺ = A x + B u`, `u = F x`.
///
/// Iterates `P ← Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA` from `P = Q` and returns
/// `F = −(R + BᵀPB)⁻¹BᵀPA`.
pub fn solve_lqr(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let n = check_square(a, "A")?;
    let p_dim = b.ncols();
    if b.nrows() != n {
        return Err(dim_err(format!("B must have {n} rows, got {}", b.nrows())));
    }
    if q.shape() != (n, n) {
        return Err(dim_err(format!("Q must be {n}x{n}")));
    }
    if r.shape() != (p_dim, p_dim) {
        return Err(dim_err(format!("R must be {p_dim}x{p_dim}")));
    }
    if !is_symmetric_psd(q, PSD_TOL) {
        return Err(Error::Config("LQR weight Q must be symmetric PSD".into()));
    }

    let at = a.transpose();
    let bt = b.transpose();
    let mut p = symmetrize(q);
    for _ in 0..RICCATI_MAX_ITER {
        let pa = &p * a;
        let btpa = &bt * &pa;
        let s = r + &bt * &p * b;
        let k = spd_solve(&s, &btpa, "R + BᵀPB")?;
        let next = symmetrize(&(q + &at * &pa - btpa.transpose() * &k));
        let delta = max_abs(&(&next - &p));
        p = next;
        if !delta.is_finite() {
            break;
        }
        if delta <= RICCATI_REL_TOL * max_abs(&p).max(1.0) {
            let pa = &p * a;
            let s = r + &bt * &p * b;
            let gain = spd_solve(&s, &(&bt * &pa), "R + BᵀPB")?;
            return Ok(-gain);
        }
    }
    Err(Error::SolverFailure {
        what: "LQR Riccati iteration",
        iterations: RICCATI_MAX_ITER,
    })
}

/// One predict + correct step of the Kalman filter variance recursion.
///
/// Returns `(prior, gain, posterior)`; the posterior uses the Joseph form and
/// is symmetrized.
pub fn variance_step(p: &Matrix, sys: &SystemMatrices) -> Result<(Matrix, Matrix, Matrix)> {
    let prior = symmetrize(&(&sys.a * p * sys.a.transpose() + &sys.q));
    let ht = sys.h.transpose();
    let s = &sys.h * &prior * &ht + &sys.r;
    // L = P⁻ Hᵀ S⁻¹  ⇔  S Lᵀ = H P⁻
    let lt = spd_solve(&s, &(&sys.h * &prior), "innovation covariance")?;
    let gain = lt.transpose();
    let n = sys.a.nrows();
    let i_lh = Matrix::identity(n, n) - &gain * &sys.h;
    let posterior = symmetrize(&(&i_lh * &prior * i_lh.transpose() + &gain * &sys.r * &lt));
    Ok((prior, gain, posterior))
}

/// Steady-state posterior variance `P̄` of the Kalman filter for `sys`.
pub fn steady_state_posterior_variance(sys: &SystemMatrices) -> Result<Matrix> {
    sys.check_dimensions()?;
    let n = sys.a.nrows();
    let mut p = if max_abs(&sys.q) > 0.0 {
        sys.q.clone()
    } else {
        Matrix::identity(n, n)
    };
    for _ in 0..RICCATI_MAX_ITER {
        let (_, _, next) = variance_step(&p, sys)?;
        let delta = max_abs(&(&next - &p));
        p = next;
        if !delta.is_finite() {
            break;
        }
        if delta <= RICCATI_REL_TOL * max_abs(&p).max(1.0) {
            return Ok(p);
        }
    }
    Err(Error::SolverFailure {
        what: "Kalman variance iteration",
        iterations: RICCATI_MAX_ITER,
    })
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    check_square(m, "matrix")?;
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let eig = m.complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}
