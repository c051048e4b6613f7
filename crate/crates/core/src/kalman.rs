//! Kalman measurement update in covariance and information form, and the
//! posterior Fisher information (PCRLB) recursion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::statespace::{GaussianBelief, LinearModel};

/// Innovation covariances with a condition number above this are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Byproducts of a measurement update.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateDiagnostics {
    /// `z - H x̂`
    pub innovation: DVector<f64>,
    /// `H P̂ H' + R`
    pub innovation_cov: DMatrix<f64>,
    /// Kalman gain, L x M.
    pub gain: DMatrix<f64>,
}

fn check_shapes(op: &'static str, prior: &GaussianBelief, z: &DVector<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    let l = prior.dim();
    let m = z.len();
    if h.shape() != (m, l) {
        return Err(Error::dimension(op, format!("H is {}x{}, expected {m}x{l}", h.nrows(), h.ncols())));
    }
    if r.shape() != (m, m) {
        return Err(Error::dimension(op, format!("R is {}x{}, expected {m}x{m}", r.nrows(), r.ncols())));
    }
    Ok(())
}

fn innovation_terms(
    op: &'static str,
    prior: &GaussianBelief,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_shapes(op, prior, z, h, r)?;
    let innovation = z - h * prior.mean();
    let s = linalg::symmetrize(&(h * prior.cov() * h.transpose() + r));
    let cond = linalg::spd_condition_number(&s);
    if cond > MAX_INNOVATION_CONDITION {
        return Err(Error::numerical(op, format!("innovation covariance condition number {cond:e} exceeds 1e12")));
    }
    Ok((innovation, s))
}

/// Covariance-form gain `P H' (H P H' + R)^{-1}` from a Cholesky solve.
fn covariance_gain(op: &'static str, p: &DMatrix<f64>, h: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = linalg::cholesky(s, op)?;
    // S G' = H P
    Ok(chol.solve(&(h * p)).transpose())
}

/// Standard Kalman measurement update in covariance form.
pub fn kf_update(
    prior: &GaussianBelief,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(GaussianBelief, UpdateDiagnostics)> {
    const OP: &str = "kf_update";
    let (innovation, s) = innovation_terms(OP, prior, z, h, r)?;
    let gain = covariance_gain(OP, prior.cov(), h, &s)?;
    let mean = prior.mean() + &gain * &innovation;
    let l = prior.dim();
    let cov = (DMatrix::identity(l, l) - &gain * h) * prior.cov();
    Ok((GaussianBelief::from_parts(mean, cov), UpdateDiagnostics { innovation, innovation_cov: s, gain }))
}

/// Kalman measurement update in information form:
/// `P⁺⁻¹ = P̂⁻¹ + H'R⁻¹H`, gain `P⁺ H' R⁻¹`.
pub fn kf_information_update(
    prior: &GaussianBelief,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(GaussianBelief, UpdateDiagnostics)> {
    const OP: &str = "kf_information_update";
    let (innovation, s) = innovation_terms(OP, prior, z, h, r)?;
    let r_inv = linalg::spd_inverse(r, OP)?;
    let prior_info = linalg::spd_inverse(prior.cov(), OP)?;
    let post_info = linalg::symmetrize(&(prior_info + h.transpose() * &r_inv * h));
    let cov = linalg::spd_inverse(&post_info, OP)?;
    let gain = &cov * h.transpose() * r_inv;
    let mean = prior.mean() + &gain * &innovation;
    Ok((GaussianBelief::from_parts(mean, cov), UpdateDiagnostics { innovation, innovation_cov: s, gain }))
}

/// Joseph-form posterior covariance `(I - GH) P (I - GH)' + G R G'`.
pub fn joseph_covariance(prior_cov: &DMatrix<f64>, gain: &DMatrix<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let l = prior_cov.nrows();
    let a = DMatrix::identity(l, l) - gain * h;
    linalg::symmetrize(&(&a * prior_cov * a.transpose() + gain * r * gain.transpose()))
}

/// One predict + update step of the posterior Fisher information for a
/// linear model whose measurement covariance is `r R̄`.
///
/// `J ← (F J⁻¹ F' + Q)⁻¹ + (1/r) H' R̄⁻¹ H`. An infinite `r` leaves the
/// predicted information unchanged.
pub fn pcrlb_recursion(prior_info: &DMatrix<f64>, model: &LinearModel, r: f64) -> Result<DMatrix<f64>> {
    const OP: &str = "pcrlb_recursion";
    if !(r > 0.0) {
        return Err(Error::domain(OP, format!("r = {r} must be positive")));
    }
    let l = model.state_dim();
    if prior_info.shape() != (l, l) {
        return Err(Error::dimension(OP, "information matrix does not match the model"));
    }
    let f = model.transition();
    let p = linalg::spd_inverse(prior_info, OP)?;
    let p_pred = f * p * f.transpose() + model.process_noise();
    let j_pred = linalg::spd_inverse(&p_pred, OP)?;
    let h = model.measurement();
    let rbar_inv = linalg::spd_inverse(model.shape(), OP)?;
    Ok(linalg::symmetrize(&(j_pred + h.transpose() * rbar_inv * h / r)))
}
