//! Normal variance mixture filter (NVMF) with inverse-gamma mixing.
//!
//! The measurement noise is modeled as `v | r ~ N(0, r R̄)` with
//! `r ~ IG(α, β)`, which makes `v` multivariate t with `ν = 2α` degrees of
//! freedom and scale matrix `(β/α) R̄`. The update treats `r` as missing
//! data: each EM iteration is an ordinary Kalman update with the noise
//! covariance `ψ(x) R̄`, where `ψ` is the inverse of the posterior mean of
//! `1/r`. After convergence the Kalman covariance of the final iteration is
//! inflated by a rank-one correction that accounts for the unobserved `r`
//! (Louis' observed-information identity, applied via Sherman-Morrison).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kalman;
use crate::linalg;
use crate::specfun::{self, RngStream};
use crate::statespace::{GaussianBelief, LinearModel};

/// When `1 - u'P u` falls to this value or below, the rank-one correction
/// is skipped and the uncorrected covariance is returned.
pub const CORRECTION_FLOOR: f64 = 1e-10;

/// Allowed decrease of the log posterior between EM iterations, relative
/// to `max(1, |λ|)`.
pub const MONOTONICITY_TOL: f64 = 1e-9;

/// Inverse-gamma mixing density `IG(r; α, β) ∝ r^{-α-1} e^{-β/r}`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InverseGammaMixing {
    alpha: f64,
    beta: f64,
}

impl InverseGammaMixing {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::domain("InverseGammaMixing::new", format!("alpha = {alpha}, beta = {beta} must be positive")));
        }
        Ok(Self { alpha, beta })
    }

    /// Mixing density with mean `r0` (requires `alpha > 1`); approaches a
    /// point mass at `r0` as `alpha` grows.
    pub fn with_mean(r0: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 1.0) {
            return Err(Error::domain("InverseGammaMixing::with_mean", "alpha must exceed 1 for a finite mean"));
        }
        Self::new(alpha, r0 * (alpha - 1.0))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Degrees of freedom of the induced t distribution, `2α`.
    pub fn dof(&self) -> f64 {
        2.0 * self.alpha
    }

    /// Scale factor of the induced t distribution, `Σ = (β/α) R̄`.
    pub fn t_scale(&self) -> f64 {
        self.beta / self.alpha
    }

    pub fn log_pdf(&self, r: f64) -> f64 {
        if !(r > 0.0) {
            return f64::NEG_INFINITY;
        }
        let lng = specfun::log_gamma(self.alpha).expect("alpha validated at construction");
        self.alpha * self.beta.ln() - lng - (self.alpha + 1.0) * r.ln() - self.beta / r
    }

    /// `Pr{r ≤ x} = 1 - P(α, β/x)`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Ok(0.0);
        }
        Ok(1.0 - specfun::reg_lower_inc_gamma(self.alpha, self.beta / x)?)
    }

    /// Tail probability `Pr{r > x} = P(α, β/x)`.
    pub fn tail(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Ok(1.0);
        }
        specfun::reg_lower_inc_gamma(self.alpha, self.beta / x)
    }
}

/// EM termination settings.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NvmfConfig {
    /// Stop once the log posterior improves by less than this.
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Always run `max_iterations` iterations, ignoring `epsilon`.
    pub fixed_iteration_mode: bool,
}

impl Default for NvmfConfig {
    fn default() -> Self {
        Self { epsilon: 1e-6, max_iterations: 25, fixed_iteration_mode: false }
    }
}

impl NvmfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon = {} must be positive", self.epsilon)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NvmfDiagnostics {
    pub iterations_used: usize,
    /// `λ(x⁽⁰⁾), λ(x⁽¹⁾), …`
    pub log_posterior_trace: Vec<f64>,
    /// ψ at the last EM iterate that produced the estimate.
    pub final_psi: f64,
    /// ϕ at the converged estimate.
    pub final_phi: f64,
    /// `1 - u'P⁽∞⁾u`
    pub correction_denominator: f64,
    /// False when the denominator fell below [`CORRECTION_FLOOR`] and the
    /// uncorrected covariance was returned.
    pub correction_applied: bool,
}

/// Shape-matrix factor reused across the quadratic forms of one update.
struct ShapeFactor {
    chol: Cholesky<f64, Dyn>,
}

impl ShapeFactor {
    fn new(rbar: &DMatrix<f64>, op: &'static str) -> Result<Self> {
        Ok(Self { chol: linalg::cholesky(rbar, op)? })
    }

    /// `½ e' R̄⁻¹ e`
    fn half_quad(&self, e: &DVector<f64>) -> f64 {
        let y = self.chol.l().solve_lower_triangular(e).expect("nonsingular triangular factor");
        0.5 * y.norm_squared()
    }

    fn solve(&self, e: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(e)
    }

    fn log_det(&self) -> f64 {
        self.chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
    }
}

fn check_meas_shapes(op: &'static str, x: &DVector<f64>, z: &DVector<f64>, h: &DMatrix<f64>, rbar: &DMatrix<f64>) -> Result<()> {
    let m = z.len();
    if h.shape() != (m, x.len()) || rbar.shape() != (m, m) {
        return Err(Error::dimension(op, "state, measurement, H and Rbar sizes disagree"));
    }
    Ok(())
}

/// `ζ(x) = ½ (z - Hx)' R̄⁻¹ (z - Hx)`.
pub fn zeta(x: &DVector<f64>, z: &DVector<f64>, h: &DMatrix<f64>, rbar: &DMatrix<f64>) -> Result<f64> {
    check_meas_shapes("zeta", x, z, h, rbar)?;
    Ok(ShapeFactor::new(rbar, "zeta")?.half_quad(&(z - h * x)))
}

/// Inverse posterior mean of `1/r`: `(ζ + β) / (M/2 + α)`.
pub fn psi(zeta_val: f64, mixing: &InverseGammaMixing, m: usize) -> f64 {
    (zeta_val + mixing.beta) / (0.5 * m as f64 + mixing.alpha)
}

/// Inverse posterior standard deviation of `1/r`: `(ζ + β) / √(M/2 + α)`.
pub fn phi(zeta_val: f64, mixing: &InverseGammaMixing, m: usize) -> f64 {
    (zeta_val + mixing.beta) / (0.5 * m as f64 + mixing.alpha).sqrt()
}

/// Conjugate posterior of `r` given the residual: `IG(M/2 + α, ζ + β)`.
pub fn posterior_r_params(zeta_val: f64, mixing: &InverseGammaMixing, m: usize) -> InverseGammaMixing {
    InverseGammaMixing { alpha: 0.5 * m as f64 + mixing.alpha, beta: zeta_val + mixing.beta }
}

/// Log posterior of the state up to an `x`-independent constant:
///
/// `λ(x) = -½ (x - x̂)' P̂⁻¹ (x - x̂) - (M/2 + α) ln(1 + ζ(x)/β)`.
pub fn log_posterior(
    x: &DVector<f64>,
    prior: &GaussianBelief,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    rbar: &DMatrix<f64>,
    mixing: &InverseGammaMixing,
) -> Result<f64> {
    const OP: &str = "log_posterior";
    check_meas_shapes(OP, x, z, h, rbar)?;
    let prior_term = linalg::inv_quad_form(prior.cov(), &(x - prior.mean()), OP)?;
    let zeta_val = ShapeFactor::new(rbar, OP)?.half_quad(&(z - h * x));
    Ok(log_posterior_terms(prior_term, zeta_val, mixing, z.len()))
}

fn log_posterior_terms(prior_quad: f64, zeta_val: f64, mixing: &InverseGammaMixing, m: usize) -> f64 {
    -0.5 * prior_quad - (0.5 * m as f64 + mixing.alpha) * (zeta_val / mixing.beta).ln_1p()
}

/// Gradient of [`log_posterior`] with respect to `x`:
/// `-P̂⁻¹(x - x̂) + ψ(x)⁻¹ H' R̄⁻¹ (z - Hx)`.
pub fn log_posterior_gradient(
    x: &DVector<f64>,
    prior: &GaussianBelief,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    rbar: &DMatrix<f64>,
    mixing: &InverseGammaMixing,
) -> Result<DVector<f64>> {
    const OP: &str = "log_posterior_gradient";
    check_meas_shapes(OP, x, z, h, rbar)?;
    let shape = ShapeFactor::new(rbar, OP)?;
    let prior_chol = linalg::cholesky(prior.cov(), OP)?;
    let e = z - h * x;
    let psi_val = psi(shape.half_quad(&e), mixing, z.len());
    Ok(h.transpose() * shape.solve(&e) / psi_val - prior_chol.solve(&(x - prior.mean())))
}

/// `u = H' (ϕ R̄)⁻¹ (H x̂ - z)`.
pub fn u_vector(x_hat: &DVector<f64>, z: &DVector<f64>, h: &DMatrix<f64>, rbar: &DMatrix<f64>, phi_val: f64) -> Result<DVector<f64>> {
    check_meas_shapes("u_vector", x_hat, z, h, rbar)?;
    if !(phi_val > 0.0) {
        return Err(Error::domain("u_vector", format!("phi = {phi_val} must be positive")));
    }
    let shape = ShapeFactor::new(rbar, "u_vector")?;
    Ok(h.transpose() * shape.solve(&(h * x_hat - z)) / phi_val)
}

/// Rank-one covariance inflation
/// `P + P u u' P / (1 - u'P u)`, the inverse of `P⁻¹ - u u'`.
///
/// Fails when the denominator is not positive, since `P⁻¹ - u u'` is then
/// not positive definite.
pub fn covariance_correction(p_inf: &DMatrix<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    if p_inf.shape() != (u.len(), u.len()) {
        return Err(Error::dimension("covariance_correction", "P and u sizes disagree"));
    }
    let pu = p_inf * u;
    let denominator = 1.0 - u.dot(&pu);
    if !(denominator > 0.0) {
        return Err(Error::CovarianceCorrection { denominator });
    }
    Ok(linalg::symmetrize(&(p_inf + &pu * pu.transpose() / denominator)))
}

/// Log density of the inverse-gamma normal variance mixture, i.e. of the
/// central multivariate t with `ν = 2α` and `Σ = (β/α) R̄`.
pub fn nvm_t_log_density(v: &DVector<f64>, mixing: &InverseGammaMixing, rbar: &DMatrix<f64>) -> Result<f64> {
    const OP: &str = "nvm_t_log_density";
    let m = v.len();
    if rbar.shape() != (m, m) {
        return Err(Error::dimension(OP, "v and Rbar sizes disagree"));
    }
    let shape = ShapeFactor::new(rbar, OP)?;
    let nu = mixing.dof();
    let md = m as f64;
    let scale = mixing.t_scale();
    // v'Σ⁻¹v / ν = (α/β) v'R̄⁻¹v / (2α) = ζ/β
    let ratio = shape.half_quad(v) / mixing.beta;
    let log_det_sigma = md * scale.ln() + shape.log_det();
    Ok(specfun::log_gamma(0.5 * (nu + md))? - specfun::log_gamma(0.5 * nu)?
        - 0.5 * md * (std::f64::consts::PI * nu).ln()
        - 0.5 * log_det_sigma
        - 0.5 * (nu + md) * ratio.ln_1p())
}

/// One NVMF measurement update from the predicted belief.
///
/// Runs EM from the predicted mean. Each iteration computes
/// `ψ = ψ(x⁽ⁱ⁾)`, performs a Kalman update with `R = ψ R̄`, and evaluates
/// the log posterior; iteration stops when the improvement drops below
/// `config.epsilon` (unless `fixed_iteration_mode`) or the budget runs out.
/// The covariance of the final Kalman step is then corrected with
/// `u = H'(ϕ R̄)⁻¹(H x̂ - z)` at the converged estimate.
pub fn nvmf_update(
    prior: &GaussianBelief,
    z: &DVector<f64>,
    model: &LinearModel,
    mixing: &InverseGammaMixing,
    config: &NvmfConfig,
) -> Result<(GaussianBelief, NvmfDiagnostics)> {
    const OP: &str = "nvmf_update";
    config.validate()?;
    let h = model.measurement();
    let rbar = model.shape();
    check_meas_shapes(OP, prior.mean(), z, h, rbar)?;
    let m = z.len();
    let shape = ShapeFactor::new(rbar, OP)?;
    let prior_chol = linalg::cholesky(prior.cov(), OP)?;
    let lambda = |x: &DVector<f64>| -> (f64, f64) {
        let d = x - prior.mean();
        let y = prior_chol.l().solve_lower_triangular(&d).expect("nonsingular triangular factor");
        let zeta_val = shape.half_quad(&(z - h * x));
        (log_posterior_terms(y.norm_squared(), zeta_val, mixing, m), zeta_val)
    };

    let (mut lam, mut zeta_val) = lambda(prior.mean());
    let mut trace = Vec::with_capacity(config.max_iterations + 1);
    trace.push(lam);
    let mut post = None;
    let mut final_psi = f64::NAN;
    let mut iterations_used = 0;

    for i in 0..config.max_iterations {
        let psi_val = psi(zeta_val, mixing, m);
        let (belief, _) = kalman::kf_update(prior, z, h, &(rbar * psi_val))?;
        let (lam_next, zeta_next) = lambda(belief.mean());
        let drop = lam - lam_next;
        if drop > MONOTONICITY_TOL * lam.abs().max(1.0) {
            return Err(Error::Monotonicity { iteration: i + 1, decrease: drop });
        }
        trace.push(lam_next);
        let gain = lam_next - lam;
        lam = lam_next;
        zeta_val = zeta_next;
        final_psi = psi_val;
        iterations_used = i + 1;
        post = Some(belief);
        if !config.fixed_iteration_mode && gain < config.epsilon {
            break;
        }
    }

    let (x_hat, p_inf) = post.expect("at least one EM iteration").into_parts();
    let final_phi = phi(zeta_val, mixing, m);
    let u = h.transpose() * shape.solve(&(h * &x_hat - z)) / final_phi;
    let pu = &p_inf * &u;
    let correction_denominator = 1.0 - u.dot(&pu);
    let (cov, correction_applied) = if correction_denominator > CORRECTION_FLOOR {
        (covariance_correction(&p_inf, &u)?, true)
    } else {
        (p_inf, false)
    };
    Ok((
        GaussianBelief::from_parts(x_hat, cov),
        NvmfDiagnostics {
            iterations_used,
            log_posterior_trace: trace,
            final_psi,
            final_phi,
            correction_denominator,
            correction_applied,
        },
    ))
}

/// Result of fitting the mixing density to the design parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub mixing: InverseGammaMixing,
    /// `|E[ψ⁻¹(v)] - 1/r_regular|` at the chosen shape.
    pub residual: f64,
}

/// Shape grid `0.50, 0.51, …, 5.00`.
pub fn default_alpha_grid() -> Vec<f64> {
    (50..=500).map(|i| i as f64 / 100.0).collect()
}

/// Scale that puts tail mass `rho` above `r_out`: `β = r_out P⁻¹(α, ρ)`.
pub fn scale_for_tail(alpha: f64, r_out: f64, rho: f64) -> Result<f64> {
    Ok(r_out * specfun::inv_reg_lower_inc_gamma(alpha, rho)?)
}

/// Chooses `(α, β)` from the design parameters `r_out` and
/// `ρ = Pr{r > r_out}`.
///
/// For each shape on the grid the scale follows from the tail constraint,
/// and the expected complete-data information factor `E_v[ψ⁻¹(v)]` under the
/// induced t noise is estimated by sampling `r ~ IG(α, β)`,
/// `v ~ N(0, r R̄)`. The shape whose factor is closest to `1/r_regular`
/// wins; one bisection pass between the best grid point and the neighbor on
/// the other side of the root refines it. Every shape is evaluated on a
/// clone of `rng`, so the grid shares common random numbers and the result
/// does not depend on thread scheduling.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_mixing(
    r_out: f64,
    rho: f64,
    r_regular: f64,
    rbar: &DMatrix<f64>,
    m: usize,
    alpha_grid: &[f64],
    n_samples: usize,
    rng: &RngStream,
) -> Result<Calibration> {
    const OP: &str = "calibrate_mixing";
    if alpha_grid.is_empty() {
        return Err(Error::domain(OP, "alpha grid is empty"));
    }
    if n_samples < 10_000 {
        return Err(Error::domain(OP, format!("n_samples = {n_samples} is below 10^4")));
    }
    if !(r_out > 0.0) || !(r_regular > 0.0) || !(rho > 0.0 && rho < 1.0) {
        return Err(Error::domain(OP, "r_out and r_regular must be positive and rho must lie in (0, 1)"));
    }
    if m == 0 || rbar.shape() != (m, m) {
        return Err(Error::dimension(OP, "Rbar must be M x M"));
    }
    linalg::cholesky(rbar, OP)?;
    let target = 1.0 / r_regular;

    // Signed residual E[ψ⁻¹] - 1/r_regular; NaN when the shape is unusable.
    let evaluate = |alpha: f64| -> (f64, f64) {
        let Ok(beta) = scale_for_tail(alpha, r_out, rho) else {
            return (f64::NAN, f64::NAN);
        };
        match expected_inverse_psi(alpha, beta, m, n_samples, &mut rng.clone()) {
            Ok(e) => (beta, e - target),
            Err(_) => (beta, f64::NAN),
        }
    };

    let grid: Vec<(f64, f64, f64)> = alpha_grid
        .par_iter()
        .map(|&a| {
            let (b, d) = evaluate(a);
            (a, b, d)
        })
        .collect();

    let best_idx = grid
        .iter()
        .enumerate()
        .filter(|(_, g)| g.2.is_finite())
        .min_by(|a, b| a.1 .2.abs().total_cmp(&b.1 .2.abs()))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Calibration("no finite residual on the alpha grid".into()))?;

    let mut best = grid[best_idx];
    let neighbor = [best_idx.checked_sub(1), best_idx.checked_add(1).filter(|&j| j < grid.len())]
        .into_iter()
        .flatten()
        .find(|&j| grid[j].2.is_finite() && grid[j].2.signum() != best.2.signum());

    if let Some(j) = neighbor {
        let (mut a_lo, mut d_lo) = (best.0, best.2);
        let mut a_hi = grid[j].0;
        for _ in 0..40 {
            let mid = 0.5 * (a_lo + a_hi);
            let (b, d) = evaluate(mid);
            if !d.is_finite() {
                break;
            }
            if d.abs() < best.2.abs() {
                best = (mid, b, d);
            }
            if d.signum() == d_lo.signum() {
                a_lo = mid;
                d_lo = d;
            } else {
                a_hi = mid;
            }
            if (a_hi - a_lo).abs() < 1e-9 {
                break;
            }
        }
    }

    Ok(Calibration { mixing: InverseGammaMixing::new(best.0, best.1)?, residual: best.2.abs() })
}

/// Monte Carlo estimate of `E_v[(M/2 + α) / (½ v'R̄⁻¹v + β)]` for
/// `v ~ t(2α, (β/α) R̄)`.
///
/// With `v = √r L w`, `L L' = R̄`, `w ~ N(0, I)`, the quadratic form is
/// `½ r w'w`, so no matrix work is needed per sample.
pub fn expected_inverse_psi(alpha: f64, beta: f64, m: usize, n_samples: usize, rng: &mut RngStream) -> Result<f64> {
    let k = 0.5 * m as f64 + alpha;
    let mut sum = 0.0;
    for _ in 0..n_samples {
        let r = specfun::sample_inverse_gamma(alpha, beta, rng)?;
        let w2: f64 = (0..m).map(|_| rng.standard_normal().powi(2)).sum();
        sum += k / (0.5 * r * w2 + beta);
    }
    Ok(sum / n_samples as f64)
}
