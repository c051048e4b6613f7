//! Linear Gaussian state-space model, prediction and two-point
//! initialization.
//!
//! The constant-velocity helpers order the state as positions followed by
//! velocities, `[x, y, ẋ, ẏ]` in two dimensions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

const SYMMETRY_TOL: f64 = 1e-10;

/// State mean and error covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Validated constructor: `cov` must be symmetric (to 1e-10 relative)
    /// and positive definite. The stored covariance is re-symmetrized.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::dimension(
                "GaussianBelief::new",
                format!("mean has length {}, covariance is {}x{}", mean.len(), cov.nrows(), cov.ncols()),
            ));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("GaussianBelief::new", "mean has non-finite entries"));
        }
        if linalg::asymmetry(&cov) > SYMMETRY_TOL {
            return Err(Error::numerical("GaussianBelief::new", "covariance is not symmetric"));
        }
        linalg::cholesky(&cov, "GaussianBelief::new")?;
        Ok(Self { mean, cov: linalg::symmetrize(&cov) })
    }

    /// Constructor for covariances produced by this crate's own arithmetic;
    /// only symmetrizes.
    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov: linalg::symmetrize(&cov) }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }
}

/// Transition `F`, process noise `Q`, measurement matrix `H` and the
/// measurement noise shape matrix `R̄` (normalized to unit determinant).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    f: DMatrix<f64>,
    q: DMatrix<f64>,
    h: DMatrix<f64>,
    rbar: DMatrix<f64>,
}

impl LinearModel {
    /// Builds a model, dividing `rbar` by `det(rbar)^{1/M}` so that the
    /// stored shape matrix has unit determinant.
    pub fn new(f: DMatrix<f64>, q: DMatrix<f64>, h: DMatrix<f64>, rbar: DMatrix<f64>) -> Result<Self> {
        const OP: &str = "LinearModel::new";
        let l = f.nrows();
        if l == 0 || !f.is_square() {
            return Err(Error::dimension(OP, "F must be square and nonempty"));
        }
        if q.nrows() != l || q.ncols() != l {
            return Err(Error::dimension(OP, "Q must be L x L"));
        }
        let m = h.nrows();
        if m == 0 || h.ncols() != l {
            return Err(Error::dimension(OP, "H must be M x L"));
        }
        if rbar.nrows() != m || rbar.ncols() != m {
            return Err(Error::dimension(OP, "Rbar must be M x M"));
        }
        if linalg::asymmetry(&q) > SYMMETRY_TOL || linalg::asymmetry(&rbar) > SYMMETRY_TOL {
            return Err(Error::numerical(OP, "Q and Rbar must be symmetric"));
        }
        linalg::psd_factor(&q, OP)?;
        let chol = linalg::cholesky(&rbar, OP)?;
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let rbar = linalg::symmetrize(&rbar) * (-log_det / m as f64).exp();
        Ok(Self { f, q: linalg::symmetrize(&q), h, rbar })
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn measurement(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.rbar
    }

    pub fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn meas_dim(&self) -> usize {
        self.h.nrows()
    }
}

/// Constant-velocity transition for `dims` spatial dimensions:
/// `[[1, T], [0, 1]] ⊗ I`.
pub fn cv_transition_nd(t: f64, dims: usize) -> DMatrix<f64> {
    let block = DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]);
    block.kronecker(&DMatrix::identity(dims, dims))
}

/// Planar constant-velocity transition (4x4).
pub fn cv_transition(t: f64) -> DMatrix<f64> {
    cv_transition_nd(t, 2)
}

/// White-noise-acceleration process noise for `dims` spatial dimensions:
/// `q [[T³/3, T²/2], [T²/2, T]] ⊗ I`.
pub fn cv_process_noise_nd(t: f64, q: f64, dims: usize) -> DMatrix<f64> {
    let t2 = t * t;
    let block = DMatrix::from_row_slice(2, 2, &[t2 * t / 3.0, t2 / 2.0, t2 / 2.0, t]) * q;
    block.kronecker(&DMatrix::identity(dims, dims))
}

/// Planar white-noise-acceleration process noise (4x4).
pub fn cv_process_noise(t: f64, q: f64) -> DMatrix<f64> {
    cv_process_noise_nd(t, q, 2)
}

/// Position-only measurement matrix `[I 0]` for the constant-velocity state.
pub fn cv_measurement(dims: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(dims, 2 * dims);
    h.view_mut((0, 0), (dims, dims)).fill_with_identity();
    h
}

/// Time update: `x ← F x`, `P ← F P F' + Q`.
pub fn predict(belief: &GaussianBelief, model: &LinearModel) -> GaussianBelief {
    let f = model.transition();
    let mean = f * belief.mean();
    let cov = f * belief.cov() * f.transpose() + model.process_noise();
    GaussianBelief::from_parts(mean, cov)
}

/// Two-point differencing initialization from position measurements at
/// `k = -1` and `k = 0` with a common measurement covariance `r`.
pub fn two_point_init(z0: &DVector<f64>, z_minus1: &DVector<f64>, t: f64, r: &DMatrix<f64>) -> Result<GaussianBelief> {
    two_point_init_with(z0, z_minus1, t, r, r)
}

/// Two-point differencing initialization with distinct measurement
/// covariances `r0` (at `k = 0`) and `r_minus1` (at `k = -1`).
///
/// Mean `[z0; (z0 - z₋₁)/T]`; covariance blocks `R0`, `R0/T` and
/// `(R0 + R₋₁)/T²`.
pub fn two_point_init_with(
    z0: &DVector<f64>,
    z_minus1: &DVector<f64>,
    t: f64,
    r0: &DMatrix<f64>,
    r_minus1: &DMatrix<f64>,
) -> Result<GaussianBelief> {
    const OP: &str = "two_point_init";
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(OP, format!("T = {t} must be positive")));
    }
    let m = z0.len();
    if z_minus1.len() != m || r0.shape() != (m, m) || r_minus1.shape() != (m, m) {
        return Err(Error::dimension(OP, "measurement and covariance sizes disagree"));
    }
    linalg::cholesky(r0, OP)?;
    linalg::cholesky(r_minus1, OP)?;

    let mut mean = DVector::zeros(2 * m);
    mean.rows_mut(0, m).copy_from(z0);
    mean.rows_mut(m, m).copy_from(&((z0 - z_minus1) / t));

    let mut cov = DMatrix::zeros(2 * m, 2 * m);
    cov.view_mut((0, 0), (m, m)).copy_from(r0);
    cov.view_mut((0, m), (m, m)).copy_from(&(r0 / t));
    cov.view_mut((m, 0), (m, m)).copy_from(&(r0 / t));
    cov.view_mut((m, m), (m, m)).copy_from(&((r0 + r_minus1) / (t * t)));
    GaussianBelief::new(mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx_eq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn transition_at_zero_is_identity() {
        assert_eq!(cv_transition(0.0), DMatrix::identity(4, 4));
    }

    #[test]
    fn transition_at_three_seconds() {
        let f = cv_transition(3.0);
        let mut expected = DMatrix::identity(4, 4);
        expected[(0, 2)] = 3.0;
        expected[(1, 3)] = 3.0;
        assert_eq!(f, expected);
    }

    #[test]
    fn transition_semigroup_and_inverse() {
        for &(t1, t2) in &[(0.5, 2.0), (3.0, 3.0), (-1.25, 4.0)] {
            let lhs = cv_transition(t1) * cv_transition(t2);
            assert!(approx_eq(&lhs, &cv_transition(t1 + t2), 1e-14));
        }
        let prod = cv_transition(7.3) * cv_transition(-7.3);
        assert!(approx_eq(&prod, &DMatrix::identity(4, 4), 1e-14));
    }

    #[test]
    fn process_noise_unit_case() {
        let q = cv_process_noise(1.0, 1.0);
        let block = DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 0.5, 0.5, 1.0]);
        assert!(approx_eq(&q, &block.kronecker(&DMatrix::identity(2, 2)), 1e-15));
        assert_eq!(cv_process_noise(3.0, 0.0), DMatrix::zeros(4, 4));
    }

    #[test]
    fn process_noise_is_psd() {
        for &(t, q) in &[(0.01, 1e-6), (1.0, 1.0), (3.0, 1e-6), (100.0, 5.0)] {
            let eig = linalg::sym_eigenvalues(&cv_process_noise(t, q));
            let scale = eig.amax();
            assert!(eig.iter().all(|&e| e >= -1e-12 * scale), "T={t} q={q}: {eig}");
        }
    }

    #[test]
    fn shape_matrix_is_normalized_to_unit_determinant() {
        let rbar = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 9.0]);
        let model = LinearModel::new(cv_transition(1.0), cv_process_noise(1.0, 1.0), cv_measurement(2), rbar).unwrap();
        assert!((model.shape().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn model_rejects_bad_dimensions() {
        let r = LinearModel::new(cv_transition(1.0), DMatrix::zeros(3, 3), cv_measurement(2), DMatrix::identity(2, 2));
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn scalar_prediction() {
        let model = LinearModel::new(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 3.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let b = GaussianBelief::new(DVector::from_element(1, 1.5), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let p = predict(&b, &model);
        assert_eq!(p.mean()[0], 3.0);
        assert_eq!(p.cov()[(0, 0)], 7.0);
    }

    #[test]
    fn identity_prediction_leaves_belief_unchanged() {
        let model =
            LinearModel::new(DMatrix::identity(4, 4), DMatrix::zeros(4, 4), cv_measurement(2), DMatrix::identity(2, 2))
                .unwrap();
        let cov = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.1 });
        let b = GaussianBelief::new(DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]), cov).unwrap();
        assert_eq!(predict(&b, &model), b);
    }

    #[test]
    fn two_point_init_table_values() {
        let r = DMatrix::identity(2, 2) * 100.0;
        let z0 = DVector::from_vec(vec![160.0, 130.0]);
        let zm1 = DVector::from_vec(vec![100.0, 100.0]);
        let b = two_point_init(&z0, &zm1, 3.0, &r).unwrap();
        assert_eq!(b.mean().as_slice(), &[160.0, 130.0, 20.0, 10.0]);
        let block = DMatrix::from_row_slice(2, 2, &[1.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 9.0]);
        assert!(approx_eq(b.cov(), &block.kronecker(&r), 1e-12));
    }

    #[test]
    fn two_point_init_zero_velocity_for_repeated_measurement() {
        let z = DVector::from_vec(vec![5.0, -7.0]);
        let b = two_point_init(&z, &z, 2.0, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(b.mean()[2], 0.0);
        assert_eq!(b.mean()[3], 0.0);
    }

    #[test]
    fn two_point_init_rejects_nonpositive_period() {
        let z = DVector::zeros(2);
        assert!(matches!(two_point_init(&z, &z, 0.0, &DMatrix::identity(2, 2)), Err(Error::Domain { .. })));
    }

    #[test]
    fn belief_rejects_asymmetric_or_indefinite() {
        let m = DVector::zeros(2);
        assert!(GaussianBelief::new(m.clone(), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
        assert!(GaussianBelief::new(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }
}
