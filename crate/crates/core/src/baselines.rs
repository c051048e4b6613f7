//! Robust comparison filters: Kalman filter with outlier rejection (KFOR)
//! and a single-measurement probabilistic data association filter (PDAF).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kalman;
use crate::linalg;
use crate::specfun;
use crate::statespace::GaussianBelief;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KforConfig {
    /// Normalized-residual threshold.
    pub tau: f64,
    /// Half-width of the uniform outlier model, in measurement units.
    pub w: f64,
}

impl KforConfig {
    pub fn new(tau: f64, w: f64) -> Result<Self> {
        if !(tau > 0.0) || !(w > 0.0) {
            return Err(Error::Config(format!("KFOR tau = {tau} and w = {w} must be positive")));
        }
        Ok(Self { tau, w })
    }

    /// `w = 3 √r_out`.
    pub fn from_design(tau: f64, r_out: f64) -> Result<Self> {
        Self::new(tau, 3.0 * r_out.sqrt())
    }
}

/// KFOR update.
///
/// Component `m` of the measurement is flagged when
/// `|z̃_m| / √Ŝ_mm > τ`; flagged components get `w²/3` added to their
/// noise variance before a standard Kalman update. Returns the posterior
/// and the flags.
pub fn kfor_update(
    prior: &GaussianBelief,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    config: &KforConfig,
) -> Result<(GaussianBelief, Vec<bool>)> {
    let m = z.len();
    if h.shape() != (m, prior.dim()) || r.shape() != (m, m) {
        return Err(Error::dimension("kfor_update", "H and R do not match the measurement"));
    }
    let innovation = z - h * prior.mean();
    let s = h * prior.cov() * h.transpose() + r;
    let flags: Vec<bool> = (0..m).map(|i| innovation[i].abs() / s[(i, i)].sqrt() > config.tau).collect();
    let mut r_adj = r.clone();
    let inflation = config.w * config.w / 3.0;
    for (i, _) in flags.iter().enumerate().filter(|(_, &f)| f) {
        r_adj[(i, i)] += inflation;
    }
    let (post, _) = kalman::kf_update(prior, z, h, &r_adj)?;
    Ok((post, flags))
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PdafConfig {
    /// Detection probability `P_D`.
    pub p_detect: f64,
    /// Gate `g`; a measurement is validated when `z̃'Ŝ⁻¹z̃ ≤ g²`.
    pub gate: f64,
    /// Gate probability `P_G`, the chi-square CDF at `g²`.
    pub p_gate: f64,
    /// Clutter density per unit measurement volume.
    pub clutter_density: f64,
}

impl PdafConfig {
    /// `P_G` is derived from the gate and the measurement dimension `m`.
    pub fn new(p_detect: f64, gate: f64, clutter_density: f64, m: usize) -> Result<Self> {
        if !(p_detect > 0.0 && p_detect <= 1.0) {
            return Err(Error::Config(format!("P_D = {p_detect} must lie in (0, 1]")));
        }
        if !(gate > 0.0) {
            return Err(Error::Config(format!("gate = {gate} must be positive")));
        }
        if !(clutter_density >= 0.0 && clutter_density.is_finite()) {
            return Err(Error::Config(format!("clutter density = {clutter_density} must be nonnegative")));
        }
        let p_gate = if gate.is_infinite() { 1.0 } else { specfun::chi_square_cdf(m as f64, gate * gate)? };
        Ok(Self { p_detect, gate, p_gate, clutter_density })
    }

    /// `P_D = 1 - ρ`, `g² = r_out / r̄`.
    pub fn from_design(rho: f64, r_out: f64, r_regular: f64, clutter_density: f64, m: usize) -> Result<Self> {
        Self::new(1.0 - rho, (r_out / r_regular).sqrt(), clutter_density, m)
    }
}

/// Clutter density matching the Gaussian-uniform outlier model: outliers
/// occur with probability `p_out` and are spread uniformly over the cube
/// `[-6√r_out, 6√r_out]^M`.
pub fn outlier_clutter_density(p_out: f64, r_out: f64, m: usize) -> f64 {
    p_out / (12.0 * r_out.sqrt()).powi(m as i32)
}

/// Association probabilities `(β₀, β₁)` for one validated measurement.
///
/// `β₁ = P_D Λ / (λ_c (1 - P_D P_G) + P_D Λ)` with `Λ = N(z; ẑ, Ŝ)` the
/// target-originated likelihood and `λ_c` the clutter density; this is the
/// parametric-clutter PDA weight specialized to a single candidate.
pub fn association_probabilities(likelihood: f64, config: &PdafConfig) -> (f64, f64) {
    let target = config.p_detect * likelihood;
    let clutter = config.clutter_density * (1.0 - config.p_detect * config.p_gate);
    let denom = clutter + target;
    let beta1 = if denom > 0.0 { target / denom } else { 0.0 };
    (1.0 - beta1, beta1)
}

/// PDAF posterior along with the association probability of the
/// measurement (zero when it falls outside the gate).
pub fn pdaf_update_with_weight(
    prior: &GaussianBelief,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    config: &PdafConfig,
) -> Result<(GaussianBelief, f64)> {
    let (kf_post, diag) = kalman::kf_update(prior, z, h, r)?;
    let s = &diag.innovation_cov;
    let d2 = linalg::inv_quad_form(s, &diag.innovation, "pdaf_update")?;
    if d2 > config.gate * config.gate {
        return Ok((prior.clone(), 0.0));
    }
    let m = z.len() as f64;
    let chol = linalg::cholesky(s, "pdaf_update")?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let likelihood = (-0.5 * (d2 + log_det + m * (2.0 * std::f64::consts::PI).ln())).exp();
    let (beta0, beta1) = association_probabilities(likelihood, config);

    let correction = &diag.gain * &diag.innovation;
    let mean = prior.mean() + &correction * beta1;
    let spread = &correction * correction.transpose() * (beta1 * (1.0 - beta1));
    let cov = prior.cov() * beta0 + kf_post.cov() * beta1 + spread;
    Ok((GaussianBelief::from_parts(mean, cov), beta1))
}

/// PDAF update with at most one candidate measurement per scan.
///
/// An ungated measurement leaves the prior untouched. Otherwise the
/// posterior mixes the no-update and Kalman-update hypotheses with weights
/// `(β₀, β₁)`, including the spread-of-means term `β₁β₀ G z̃ z̃' G'`.
pub fn pdaf_update(
    prior: &GaussianBelief,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    config: &PdafConfig,
) -> Result<GaussianBelief> {
    Ok(pdaf_update_with_weight(prior, z, h, r, config)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior2() -> GaussianBelief {
        let cov = DMatrix::from_row_slice(4, 4, &[
            50.0, 0.0, 10.0, 0.0, //
            0.0, 60.0, 0.0, 12.0, //
            10.0, 0.0, 8.0, 0.0, //
            0.0, 12.0, 0.0, 9.0,
        ]);
        GaussianBelief::new(DVector::from_vec(vec![100.0, 100.0, 20.0, 10.0]), cov).unwrap()
    }

    fn h() -> DMatrix<f64> {
        crate::statespace::cv_measurement(2)
    }

    #[test]
    fn kfor_without_flags_is_kalman() {
        let r = DMatrix::identity(2, 2) * 100.0;
        let z = DVector::from_vec(vec![105.0, 92.0]);
        let cfg = KforConfig::new(3.0, 300.0).unwrap();
        let (post, flags) = kfor_update(&prior2(), &z, &h(), &r, &cfg).unwrap();
        assert_eq!(flags, vec![false, false]);
        let (kf, _) = kalman::kf_update(&prior2(), &z, &h(), &r).unwrap();
        assert_eq!(post, kf);
    }

    #[test]
    fn kfor_inflates_only_flagged_component() {
        let r = DMatrix::identity(2, 2) * 100.0;
        // Ŝ_xx = 150, so a residual of 100 is 8.2 normalized units.
        let z = DVector::from_vec(vec![200.0, 101.0]);
        let cfg = KforConfig::from_design(3.0, 1e4).unwrap();
        assert_eq!(cfg.w, 300.0);
        let (post, flags) = kfor_update(&prior2(), &z, &h(), &r, &cfg).unwrap();
        assert_eq!(flags, vec![true, false]);
        let mut r_adj = r.clone();
        r_adj[(0, 0)] += 30_000.0;
        let (expected, _) = kalman::kf_update(&prior2(), &z, &h(), &r_adj).unwrap();
        assert_eq!(post, expected);
    }

    #[test]
    fn kfor_damps_flagged_gain_column() {
        let r = DMatrix::identity(2, 2) * 100.0;
        let z = DVector::from_vec(vec![200.0, 101.0]);
        let cfg = KforConfig::new(3.0, 300.0).unwrap();
        let mut r_adj = r.clone();
        r_adj[(0, 0)] += 30_000.0;
        let (_, plain) = kalman::kf_update(&prior2(), &z, &h(), &r).unwrap();
        let (_, damped) = kalman::kf_update(&prior2(), &z, &h(), &r_adj).unwrap();
        let (_, flags) = kfor_update(&prior2(), &z, &h(), &r, &cfg).unwrap();
        assert!(flags[0]);
        assert!(damped.gain.column(0).norm() < plain.gain.column(0).norm());
    }

    #[test]
    fn kfor_huge_threshold_is_kalman() {
        let r = DMatrix::identity(2, 2) * 100.0;
        let z = DVector::from_vec(vec![5000.0, -3000.0]);
        let cfg = KforConfig::new(1e300, 300.0).unwrap();
        let (post, _) = kfor_update(&prior2(), &z, &h(), &r, &cfg).unwrap();
        assert_eq!(post, kalman::kf_update(&prior2(), &z, &h(), &r).unwrap().0);
    }

    #[test]
    fn pdaf_no_clutter_limit_is_kalman() {
        let r = DMatrix::identity(2, 2) * 100.0;
        let z = DVector::from_vec(vec![120.0, 80.0]);
        let cfg = PdafConfig::new(1.0, f64::INFINITY, 0.0, 2).unwrap();
        let (post, w) = pdaf_update_with_weight(&prior2(), &z, &h(), &r, &cfg).unwrap();
        assert_eq!(w, 1.0);
        let (kf, _) = kalman::kf_update(&prior2(), &z, &h(), &r).unwrap();
        assert!((post.mean() - kf.mean()).amax() < 1e-12);
        assert!((post.cov() - kf.cov()).amax() < 1e-12);
    }

    #[test]
    fn pdaf_outside_gate_returns_prior() {
        let r = DMatrix::identity(2, 2) * 100.0;
        let z = DVector::from_vec(vec![1000.0, 100.0]);
        let cfg = PdafConfig::from_design(0.01, 1e4, 100.0, 1e-7, 2).unwrap();
        assert_eq!(pdaf_update(&prior2(), &z, &h(), &r, &cfg).unwrap(), prior2());
    }

    #[test]
    fn pdaf_design_parameters() {
        let cfg = PdafConfig::from_design(0.01, 1e4, 100.0, 0.0, 2).unwrap();
        assert!((cfg.p_detect - 0.99).abs() < 1e-15);
        assert!((cfg.gate - 10.0).abs() < 1e-15);
        // chi-square(2) CDF at 100 is 1 - e^{-50}.
        assert!((cfg.p_gate - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pdaf_scalar_hand_case() {
        // Prior N(0, 1), z = 1, H = 1, R = 1: S = 2, G = 1/2.
        let one = DMatrix::from_element(1, 1, 1.0);
        let prior = GaussianBelief::new(DVector::from_element(1, 0.0), one.clone()).unwrap();
        let cfg = PdafConfig::new(0.99, 3.0, 0.05, 1).unwrap();
        let (post, b1) = pdaf_update_with_weight(&prior, &DVector::from_element(1, 1.0), &one, &one, &cfg).unwrap();
        // Λ = exp(-1/4) / √(4π); P_G = P(|N(0,1)| ≤ 3) = 0.997300203936740
        let lik = (-0.25f64).exp() / (4.0 * std::f64::consts::PI).sqrt();
        let pg = 0.997_300_203_936_740;
        let expected = 0.99 * lik / (0.05 * (1.0 - 0.99 * pg) + 0.99 * lik);
        assert!((cfg.p_gate - pg).abs() < 1e-12);
        assert!((b1 - expected).abs() < 1e-12);
        assert!((post.mean()[0] - 0.5 * expected).abs() < 1e-12);
        let var = (1.0 - expected) * 1.0 + expected * 0.5 + expected * (1.0 - expected) * 0.25;
        assert!((post.cov()[(0, 0)] - var).abs() < 1e-12);
    }

    #[test]
    fn association_probabilities_sum_to_one() {
        let cfg = PdafConfig::new(0.9, 4.0, 1e-3, 2).unwrap();
        for &lik in &[0.0, 1e-12, 1e-3, 0.5, 10.0] {
            let (b0, b1) = association_probabilities(lik, &cfg);
            assert!((0.0..=1.0).contains(&b0) && (0.0..=1.0).contains(&b1));
            assert!((b0 + b1 - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn config_validation() {
        assert!(KforConfig::new(0.0, 1.0).is_err());
        assert!(PdafConfig::new(0.0, 1.0, 0.0, 2).is_err());
        assert!(PdafConfig::new(0.5, -1.0, 0.0, 2).is_err());
        assert!(PdafConfig::new(0.5, 1.0, -1.0, 2).is_err());
    }
}
