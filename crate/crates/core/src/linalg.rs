//! Small dense linear-algebra helpers shared by the filters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// `(A + A') / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest absolute asymmetry relative to the largest absolute entry.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).amax() / scale
}

/// Cholesky factorization of a symmetric positive-definite matrix.
pub fn cholesky(a: &DMatrix<f64>, op: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if !a.is_square() {
        return Err(Error::dimension(op, format!("{}x{} matrix is not square", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(op, "matrix has non-finite entries"));
    }
    Cholesky::new(symmetrize(a)).ok_or_else(|| Error::numerical(op, "matrix is not positive definite"))
}

/// Inverse of a symmetric positive-definite matrix, re-symmetrized.
pub fn spd_inverse(a: &DMatrix<f64>, op: &'static str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(a, op)?.inverse()))
}

/// Lower-triangular factor `L` with `L L' = A` for symmetric positive
/// semi-definite `A`.
///
/// Zero pivots are allowed (the corresponding column of `L` is zero), which
/// lets degenerate covariances such as the zero matrix be factored.
pub fn psd_factor(a: &DMatrix<f64>, op: &'static str) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::dimension(op, "covariance is not square"));
    }
    let n = a.nrows();
    let a = symmetrize(a);
    let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol || !d.is_finite() {
            return Err(Error::numerical(op, format!("covariance is not positive semi-definite (pivot {d:e})")));
        }
        if d <= tol {
            // Semi-definite direction: the remaining column must vanish too.
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > 1e-9 * scale {
                    return Err(Error::numerical(op, "covariance is not positive semi-definite"));
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when the
/// smallest eigenvalue is not positive.
pub fn spd_condition_number(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(a));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 || !min.is_finite() || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Eigenvalues of the symmetric part of `a`.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(symmetrize(a)).eigenvalues
}

/// `v' A^{-1} v` through a Cholesky solve.
pub fn inv_quad_form(a: &DMatrix<f64>, v: &DVector<f64>, op: &'static str) -> Result<f64> {
    let chol = cholesky(a, op)?;
    let y = chol.l().solve_lower_triangular(v).ok_or_else(|| Error::numerical(op, "triangular solve failed"))?;
    Ok(y.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_factor_of_zero_is_zero() {
        let l = psd_factor(&DMatrix::zeros(3, 3), "t").unwrap();
        assert_eq!(l, DMatrix::zeros(3, 3));
    }

    #[test]
    fn psd_factor_reconstructs_rank_deficient_matrix() {
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let a = &v * v.transpose();
        let l = psd_factor(&a, "t").unwrap();
        assert!((&l * l.transpose() - &a).amax() < 1e-12);
    }

    #[test]
    fn psd_factor_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(psd_factor(&a, "t").is_err());
    }

    #[test]
    fn condition_number_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e6]));
        assert!((spd_condition_number(&a) - 1e6).abs() < 1e-3);
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(spd_condition_number(&s).is_infinite());
    }

    #[test]
    fn inverse_quadratic_form_matches_explicit_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let v = DVector::from_vec(vec![1.0, -2.0]);
        let direct = (v.transpose() * a.clone().try_inverse().unwrap() * &v)[(0, 0)];
        assert!((inv_quad_form(&a, &v, "t").unwrap() - direct).abs() < 1e-12);
    }
}
