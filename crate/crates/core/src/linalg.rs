//! Small dense linear-algebra helpers shared by the model, decomposition and filter code.

use nalgebra::{DMatrix, DVector, Dim, Matrix, Storage};

use crate::error::{invalid, Error, Result};

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}

/// `I₂ ⊗ 𝟙_N` as a `2N × 2` matrix.
pub fn sync_basis(n: usize) -> DMatrix<f64> {
    kron(&DMatrix::identity(2, 2), &DMatrix::from_element(n, 1, 1.0))
}

/// `I₂ ⊗ M`.
pub fn block_diag2<R: Dim, C: Dim, S: Storage<f64, R, C>>(m: &Matrix<f64, R, C, S>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            out[(i, j)] = m[(i, j)];
            out[(r + i, c + j)] = m[(i, j)];
        }
    }
    out
}

pub fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = avg;
            p[(j, i)] = avg;
        }
    }
}

/// Numerical rank with threshold `max_dim · ε · σ_max`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() <= rel_tol * scale
}

/// Symmetric positive-definite check through a Cholesky attempt.
pub fn is_spd(m: &DMatrix<f64>) -> bool {
    is_symmetric(m, 1e-12) && m.clone().cholesky().is_some()
}

/// Solves `S X = B` for symmetric positive definite `S`.
pub fn spd_solve(s: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
    Ok(chol.solve(b))
}

/// Computes `X S⁻¹` for symmetric positive definite `S`.
pub fn spd_right_solve(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(spd_solve(s, &x.transpose())?.transpose())
}

/// Solves a general square system with one step of iterative refinement.
pub fn lu_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || a.nrows() != b.nrows() {
        return invalid(format!(
            "linear solve: {}x{} system with {} right-hand rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        ));
    }
    let lu = a.clone().lu();
    let mut x = lu
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))?;
    let r = b - a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("linear solve produced non-finite values".into()));
    }
    Ok(x)
}

/// Lower Cholesky factor of a symmetric positive semidefinite matrix.
///
/// Zero pivots (rows and columns that are identically zero, as produced by a
/// vanishing noise intensity) are tolerated and yield zero columns.
pub fn psd_cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return invalid("cholesky of a non-square matrix");
    }
    let n = m.nrows();
    let scale = m.diagonal().amax();
    let tol = n as f64 * f64::EPSILON * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol.max(1e-300) {
            return Err(Error::Numerical(format!(
                "matrix is not positive semidefinite (pivot {j} = {d:e})"
            )));
        }
        if d <= tol {
            // Degenerate direction: the remaining column must vanish as well.
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > tol.sqrt() * scale.sqrt() + tol {
                    return Err(Error::Numerical(format!(
                        "matrix is not positive semidefinite (column {j})"
                    )));
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Column-major vectorization.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

/// Observability matrix `[C; CA; …; CA^{n-1}]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = c.nrows();
    let mut out = DMatrix::zeros(p * n, n);
    let mut block = c.clone();
    for i in 0..n {
        out.view_mut((i * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    out
}

/// Controllability matrix `[B, AB, …, A^{n-1}B]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    observability_matrix(&a.transpose(), &b.transpose()).transpose()
}
