//! Dense linear algebra kernels.
//!
//! Matrices are `nalgebra::DMatrix<f64>`, which stores entries column-major
//! in one contiguous buffer. Problem sizes are small (n up to about 100,
//! a few hundred constraints), so everything here is a direct method.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Result, SolverError};

pub type DenseMatrix = DMatrix<f64>;
pub type DenseVector = DVector<f64>;

/// Relative tolerance used to decide the numerical rank in [`nullspace_basis`].
pub const RANK_TOL: f64 = 1e-11;

/// Largest diagonal shift tried by [`spd_solve`].
pub const MAX_SHIFT: f64 = 1.0;

/// Result of a column-pivoted Householder QR with the full orthogonal factor.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Full `rows x rows` orthogonal factor.
    pub q: DenseMatrix,
    /// Upper-trapezoidal factor, `rows x cols`, columns in pivoted order.
    pub r: DenseMatrix,
    /// `perm[j]` is the original column stored at position `j`.
    pub perm: Vec<usize>,
    pub rank: usize,
}

/// Householder QR with column pivoting, `A P = Q R`.
///
/// Factorization stops once every remaining column norm is at or below
/// `rank_tol * ||A||_F`; the number of completed steps is the rank.
pub fn pivoted_qr(a: &DenseMatrix, rank_tol: f64) -> PivotedQr {
    let (rows, cols) = a.shape();
    let mut r = a.clone();
    let mut q = DenseMatrix::identity(rows, rows);
    let mut perm: Vec<usize> = (0..cols).collect();
    let threshold = rank_tol * a.norm();
    let steps = rows.min(cols);
    let mut rank = 0;

    for j in 0..steps {
        // Pick the remaining column with the largest trailing norm.
        let (mut best, mut best_norm) = (j, -1.0);
        for c in j..cols {
            let nrm = r.view((j, c), (rows - j, 1)).norm();
            if nrm > best_norm {
                best = c;
                best_norm = nrm;
            }
        }
        if best_norm <= threshold || best_norm == 0.0 {
            break;
        }
        if best != j {
            r.swap_columns(j, best);
            perm.swap(j, best);
        }

        let x = DenseVector::from_iterator(rows - j, r.view((j, j), (rows - j, 1)).iter().copied());
        let alpha = if x[0] >= 0.0 { -best_norm } else { best_norm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.norm();
        if vnorm > 0.0 {
            v /= vnorm;
            // R <- (I - 2vv^T) R on the trailing block.
            {
                let mut block = r.view_mut((j, j), (rows - j, cols - j));
                let w = block.tr_mul(&v);
                block.ger(-2.0, &v, &w, 1.0);
            }
            // Q <- Q (I - 2vv^T) on the trailing columns.
            {
                let mut block = q.view_mut((0, j), (rows, rows - j));
                let w = &block * &v;
                block.ger(-2.0, &w, &v, 1.0);
            }
        }
        r[(j, j)] = alpha;
        for i in (j + 1)..rows {
            r[(i, j)] = 0.0;
        }
        rank += 1;
    }

    PivotedQr { q, r, perm, rank }
}

/// Orthonormal basis of `null(A^T)` for an `(n+m) x q` matrix `A`.
///
/// The returned matrix has `(n+m) - rank(A)` orthonormal columns. An all-zero
/// (or empty) `A` yields a basis of the whole space.
pub fn nullspace_basis(a: &DenseMatrix) -> DenseMatrix {
    let rows = a.nrows();
    if a.ncols() == 0 {
        return DenseMatrix::identity(rows, rows);
    }
    let qr = pivoted_qr(a, RANK_TOL);
    qr.q.columns(qr.rank, rows - qr.rank).clone_owned()
}

/// Numerical rank of `A` under the [`RANK_TOL`] rule.
pub fn rank(a: &DenseMatrix) -> usize {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0;
    }
    pivoted_qr(a, RANK_TOL).rank
}

/// Solution of a symmetric system together with the diagonal shift that was needed.
#[derive(Debug, Clone)]
pub struct SpdSolution {
    pub x: DenseVector,
    pub shift: f64,
}

/// Solve `M x = b` for symmetric `M` by Cholesky.
///
/// If `M` is not numerically positive definite, retries with `M + tau I`,
/// starting at `1e-8 * max(1, trace(M)/dim)` and growing tenfold up to
/// [`MAX_SHIFT`].
pub fn spd_solve(m: &DenseMatrix, b: &DenseVector) -> Result<SpdSolution> {
    let dim = m.nrows();
    if m.ncols() != dim {
        return Err(SolverError::Dimension { expected: dim, got: m.ncols() });
    }
    if b.len() != dim {
        return Err(SolverError::Dimension { expected: dim, got: b.len() });
    }
    if dim == 0 {
        return Ok(SpdSolution { x: DenseVector::zeros(0), shift: 0.0 });
    }
    if let Some(x) = try_cholesky(m, b, 0.0) {
        return Ok(SpdSolution { x, shift: 0.0 });
    }
    let mut tau = 1e-8 * (m.trace() / dim as f64).max(1.0);
    while tau <= MAX_SHIFT * (1.0 + 1e-12) {
        if let Some(x) = try_cholesky(m, b, tau) {
            return Ok(SpdSolution { x, shift: tau });
        }
        tau *= 10.0;
    }
    Err(SolverError::Factorization { shift: tau / 10.0 })
}

fn try_cholesky(m: &DenseMatrix, b: &DenseVector, shift: f64) -> Option<DenseVector> {
    let mut shifted = m.clone();
    if shift > 0.0 {
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += shift;
        }
    }
    let chol = Cholesky::new(shifted)?;
    // Cholesky::new only checks pivot positivity; reject factors that are
    // numerically singular relative to the diagonal scale.
    let l = chol.l_dirty();
    let dmax = (0..l.nrows()).map(|i| l[(i, i)]).fold(0.0_f64, f64::max);
    let dmin = (0..l.nrows()).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(dmin > 1e-10 * dmax) {
        return None;
    }
    let x = chol.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// True when `M` admits an unshifted Cholesky factorization.
pub fn is_positive_definite(m: &DenseMatrix) -> bool {
    m.nrows() == m.ncols() && Cholesky::new(m.clone()).is_some()
}

/// Minimum-norm least-squares solution of `A^T d = rhs`, computed as
/// `d = A (A^T A + tau I)^{-1} rhs` with the shift rule of [`spd_solve`].
pub fn min_norm_solve(a: &DenseMatrix, rhs: &DenseVector) -> Result<DenseVector> {
    let gram = a.tr_mul(a);
    let sol = spd_solve(&gram, rhs)?;
    Ok(a * sol.x)
}

/// Right singular vector of `A` belonging to its smallest singular value,
/// and that singular value.
pub fn smallest_right_singular(a: &DenseMatrix) -> Option<(DenseVector, f64)> {
    if a.ncols() == 0 {
        return None;
    }
    // Pad with zero rows so the SVD always returns a full V.
    let (rows, cols) = a.shape();
    let padded = if rows < cols {
        let mut p = DenseMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t?;
    let (idx, sigma) = svd.singular_values.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1))?;
    Some((v_t.row(idx).transpose(), sigma))
}
