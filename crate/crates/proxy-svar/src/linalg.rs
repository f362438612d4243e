//! Half-vectorization, duplication/commutation operators, and small matrix
//! helpers shared by the moment-condition Jacobians.
//!
//! Stacking contract used throughout the crate: `vec` stacks columns
//! (column-major), `vech` stacks the lower triangle column by column.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Half-vectorization: lower triangle of a square matrix, column by column.
pub fn vech(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "vech requires a square matrix");
    let mut out = DVector::zeros(n * (n + 1) / 2);
    let mut idx = 0;
    for j in 0..n {
        for i in j..n {
            out[idx] = m[(i, j)];
            idx += 1;
        }
    }
    out
}

/// Inverse of [`vech`] for symmetric matrices.
pub fn unvech(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), n * (n + 1) / 2, "vech length does not match n");
    let mut m = DMatrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        for i in j..n {
            m[(i, j)] = v[idx];
            m[(j, i)] = v[idx];
            idx += 1;
        }
    }
    m
}

/// Position of entry `(i, j)`, `i >= j`, inside `vech` of an `n x n` matrix.
pub fn vech_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i >= j && i < n);
    j * n - j * (j + 1) / 2 + i
}

/// Duplication matrix `D_n` with `D_n vech(M) = vec(M)` for symmetric `M`.
pub fn duplication(n: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n * n, n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..n {
            let row = j * n + i;
            let col = if i >= j {
                vech_index(i, j, n)
            } else {
                vech_index(j, i, n)
            };
            d[(row, col)] = 1.0;
        }
    }
    d
}

/// Moore-Penrose inverse `D_n^+ = (D_n' D_n)^-1 D_n'`.
///
/// `D_n' D_n` is diagonal with entries 1 (diagonal positions) and 2
/// (off-diagonal pairs), so the inverse is exact in floating point.
pub fn duplication_pinv(n: usize) -> DMatrix<f64> {
    let d = duplication(n);
    let mut out = d.transpose();
    for j in 0..n {
        for i in j..n {
            let row = vech_index(i, j, n);
            if i != j {
                for c in 0..n * n {
                    out[(row, c)] *= 0.5;
                }
            }
        }
    }
    out
}

/// Commutation matrix `K_{r,c}` with `K vec(M) = vec(M')` for `M` of size `r x c`.
pub fn commutation(r: usize, c: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(r * c, r * c);
    for j in 0..c {
        for i in 0..r {
            // vec(M) position of M[i,j] is j*r+i; vec(M') position is i*c+j.
            k[(i * c + j, j * r + i)] = 1.0;
        }
    }
    k
}

/// Largest eigenvalue modulus of a (generally non-symmetric) square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max)
}

/// Inverse of a square matrix with a condition-number guard.
pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || smax / smin > 1e12 {
        return Err(Error::Singular(format!(
            "{what} has condition number above 1e12 (smin={smin:.3e}, smax={smax:.3e})"
        )));
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{what} is not invertible")))
}

/// Symmetric inverse square root of a positive-definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let emax = eig.eigenvalues.max();
    if !(emax > 0.0) {
        return Err(Error::Singular(format!("{what} is not positive definite")));
    }
    let mut scaled = eig.eigenvalues.clone();
    for e in scaled.iter_mut() {
        if *e <= emax * 1e-13 {
            return Err(Error::Singular(format!(
                "{what} is numerically rank deficient"
            )));
        }
        *e = 1.0 / e.sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&scaled) * q.transpose())
}

/// Smallest singular value of a rectangular matrix.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.min()
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky_lower(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    sym.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// Max-abs entry of a matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Check that all entries are finite.
pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}
