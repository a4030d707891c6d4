//! Small dense and banded linear-algebra kernels used by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{EkiError, Result};

/// Solves a symmetric tridiagonal system with the Thomas algorithm.
///
/// `diag` has length n, `off` has length n - 1 (the sub- and super-diagonal).
pub fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if rhs.len() != n || off.len() + 1 != n.max(1) {
        return Err(EkiError::DimensionMismatch {
            what: "tridiagonal system",
            expected: n,
            found: rhs.len(),
        });
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(EkiError::SolveFailed("zero pivot in tridiagonal solve"));
    }
    if n > 1 {
        c[0] = off[0] / denom;
    }
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - off[i - 1] * c[i - 1];
        if denom == 0.0 {
            return Err(EkiError::SolveFailed("zero pivot in tridiagonal solve"));
        }
        if i + 1 < n {
            c[i] = off[i] / denom;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / denom;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Cholesky factor of a symmetric positive definite band matrix.
///
/// Only the lower band is stored: `band[i * (bw + 1) + k]` holds entry
/// `(i, i - bw + k)`; slots that fall left of column 0 are unused.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    factor: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(n: usize, bw: usize, mut band: Vec<f64>) -> Result<Self> {
        let w = bw + 1;
        if band.len() != n * w {
            return Err(EkiError::DimensionMismatch {
                what: "band storage",
                expected: n * w,
                found: band.len(),
            });
        }
        for i in 0..n {
            let jmin = i.saturating_sub(bw);
            for j in jmin..=i {
                // L[i][j] = (A[i][j] - sum_k L[i][k] L[j][k]) / L[j][j]
                let kmin = jmin.max(j.saturating_sub(bw));
                let mut s = band[i * w + (j + bw - i)];
                for k in kmin..j {
                    s -= band[i * w + (k + bw - i)] * band[j * w + (k + bw - j)];
                }
                if j == i {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(EkiError::NotPositiveDefinite("banded stiffness matrix"));
                    }
                    band[i * w + bw] = s.sqrt();
                } else {
                    band[i * w + (j + bw - i)] = s / band[j * w + bw];
                }
            }
        }
        Ok(Self {
            n,
            bw,
            factor: band,
        })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let l = &self.factor;
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= l[i * w + (k + bw - i)] * x[k];
            }
            x[i] = s / l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= l[k * w + (i + bw - k)] * x[k];
            }
            x[i] = s / l[i * w + bw];
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Symmetric square root of a symmetric positive semi-definite matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// Pseudo-inverse of a symmetric matrix; eigenvalues below
/// `rel_cutoff * max |eigenvalue|` are treated as zero.
pub fn sym_pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let largest = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let inv = eig.eigenvalues.map(|v| {
        if largest > 0.0 && v.abs() > rel_cutoff * largest {
            1.0 / v
        } else {
            0.0
        }
    });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Full SVD that checks its own reconstruction.
///
/// nalgebra's bidiagonal iteration occasionally returns factors that do not
/// reproduce some rank-deficient inputs; the transpose is then factored
/// instead and the factors swapped.
pub fn checked_svd(m: &DMatrix<f64>) -> SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    let tol = 1e-10 * m.norm().max(f64::MIN_POSITIVE);
    let svd = m.clone().svd(true, true);
    if svd.clone().recompose().is_ok_and(|r| (r - m).norm() <= tol) {
        return svd;
    }
    let t = m.transpose().svd(true, true);
    let swapped = SVD {
        u: t.v_t.map(|v| v.transpose()),
        v_t: t.u.map(|u| u.transpose()),
        singular_values: t.singular_values,
    };
    debug_assert!(swapped
        .clone()
        .recompose()
        .is_ok_and(|r| (r - m).norm() <= tol));
    swapped
}

/// Orthonormal basis of the column span of `m`, dropping singular values below
/// `rel_cutoff` times the largest.
pub fn column_basis(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = checked_svd(m);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax > 0.0 && s > rel_cutoff * smax)
        .map(|(i, _)| i)
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

/// Euclidean norm of the part of `v` orthogonal to the orthonormal columns of `basis`.
pub fn orthogonal_residual_norm(basis: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let coeffs = basis.tr_mul(v);
    (v - basis * coeffs).norm()
}
