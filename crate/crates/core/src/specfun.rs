//! Gamma-family special functions and seeded random sampling.
//!
//! Everything downstream (mixing calibration, consistency intervals, noise
//! generation) goes through this module, so it carries no dependency on an
//! external special-function library.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

// Lanczos approximation, g = 607/128, 14 terms.
const LANCZOS_G: f64 = 5.242_187_5;
const LANCZOS_COEF: [f64; 14] = [
    57.156_235_665_862_923_5,
    -59.597_960_355_475_491_2,
    14.136_097_974_741_747_1,
    -0.491_913_816_097_620_199,
    0.339_946_499_848_118_887e-4,
    0.465_236_289_270_485_756e-4,
    -0.983_744_753_048_795_646e-4,
    0.158_088_703_224_912_494e-3,
    -0.210_264_441_724_104_883e-3,
    0.217_439_618_115_212_643e-3,
    -0.164_318_106_536_763_890e-3,
    0.844_182_239_838_527_433e-4,
    -0.261_908_384_015_814_087e-4,
    0.368_991_826_595_316_234e-5,
];

const SERIES_EPS: f64 = 1e-16;
const MAX_SERIES_TERMS: usize = 100_000;
const FPMIN: f64 = 1e-300;

/// `ln Γ(a)` for `a > 0`.
pub fn log_gamma(a: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::domain("log_gamma", format!("a = {a} must be positive and finite")));
    }
    if a >= 20.0 {
        // Stirling series; the Lanczos sum loses relative accuracy for huge a.
        let inv = 1.0 / a;
        let inv2 = inv * inv;
        let corr = inv
            * (1.0 / 12.0
                - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 / 1188.0))));
        return Ok((a - 0.5) * a.ln() - a + LN_SQRT_2PI + corr);
    }
    let mut y = a;
    let tmp = a + LANCZOS_G;
    let tmp = (a + 0.5) * tmp.ln() - tmp;
    let mut ser = 0.999_999_999_999_997_092;
    for c in LANCZOS_COEF {
        y += 1.0;
        ser += c / y;
    }
    Ok(tmp + (2.506_628_274_631_000_5 * ser / a).ln())
}

/// Log of the Gamma(a, 1) density at `x > 0`, i.e. `(a-1) ln x - x - ln Γ(a)`.
fn log_gamma_kernel(a: f64, x: f64, lng: f64) -> f64 {
    (a - 1.0) * x.ln() - x - lng
}

/// Regularized lower incomplete gamma function `P(a, x) = γ(a, x) / Γ(a)`.
///
/// Power series below `x = a + 1`, Lentz continued fraction for the upper
/// tail above it.
pub fn reg_lower_inc_gamma(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::domain("reg_lower_inc_gamma", format!("a = {a} must be positive")));
    }
    if !(x >= 0.0) {
        return Err(Error::domain("reg_lower_inc_gamma", format!("x = {x} must be nonnegative")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let lng = log_gamma(a)?;
    let log_prefactor = a * x.ln() - x - lng;
    if x < a + 1.0 {
        let mut ap = a;
        let mut del = 1.0 / a;
        let mut sum = del;
        for _ in 0..MAX_SERIES_TERMS {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * SERIES_EPS {
                return Ok((sum * log_prefactor.exp()).min(1.0));
            }
        }
        Err(Error::NonConvergence { op: "reg_lower_inc_gamma (series)", iterations: MAX_SERIES_TERMS })
    } else {
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / FPMIN;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_SERIES_TERMS {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = b + an / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < SERIES_EPS {
                let q = (log_prefactor.exp() * h).clamp(0.0, 1.0);
                return Ok(1.0 - q);
            }
        }
        Err(Error::NonConvergence { op: "reg_lower_inc_gamma (continued fraction)", iterations: MAX_SERIES_TERMS })
    }
}

const MAX_ROOT_ITERATIONS: usize = 300;

/// Inverse of [`reg_lower_inc_gamma`] in its second argument: the `x` with
/// `P(a, x) = p`.
///
/// Halley iterations from a closed-form starting guess, kept inside a
/// shrinking bracket; a step that would leave the bracket is replaced by
/// bisection.
pub fn inv_reg_lower_inc_gamma(a: f64, p: f64) -> Result<f64> {
    const OP: &str = "inv_reg_lower_inc_gamma";
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::domain(OP, format!("a = {a} must be positive")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(OP, format!("p = {p} must lie in (0, 1)")));
    }
    let lng = log_gamma(a)?;
    let mut x = initial_guess(a, p, lng);
    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;

    for _ in 0..MAX_ROOT_ITERATIONS {
        let f = reg_lower_inc_gamma(a, x)? - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let dens = log_gamma_kernel(a, x, lng).exp();
        let mut next = f64::NAN;
        if dens > 0.0 && dens.is_finite() {
            let u = f / dens;
            let curvature = (a - 1.0) / x - 1.0;
            let step = u / (1.0 - 0.5 * (u * curvature).min(1.0));
            next = x - step;
        }
        if !(next > lo && next < hi) {
            next = if hi.is_infinite() {
                2.0 * x.max(lo)
            } else if lo == 0.0 {
                0.5 * hi
            } else {
                0.5 * (lo + hi)
            };
        }
        let converged = (next - x).abs() <= 1e-15 * x.abs() || (hi.is_finite() && hi - lo <= 1e-15 * hi);
        x = next;
        if converged {
            return Ok(x);
        }
    }
    Err(Error::NonConvergence { op: OP, iterations: MAX_ROOT_ITERATIONS })
}

fn initial_guess(a: f64, p: f64, lng: f64) -> f64 {
    if a > 1.0 {
        // Wilson-Hilferty with a rational approximation of the normal quantile.
        let pp = if p < 0.5 { p } else { 1.0 - p };
        let t = (-2.0 * pp.ln()).sqrt();
        let mut z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t;
        if p < 0.5 {
            z = -z;
        }
        (a * (1.0 - 1.0 / (9.0 * a) - z / (3.0 * a.sqrt())).powi(3)).max(1e-3)
    } else {
        let t = 1.0 - a * (0.253 + a * 0.12);
        if p < t {
            // Leading term of the series, P(a, x) ≈ x^a / Γ(a + 1).
            (p * (lng + a.ln()).exp()).powf(1.0 / a).max(f64::MIN_POSITIVE)
        } else {
            1.0 - (1.0 - (p - t) / (1.0 - t)).ln()
        }
    }
}

/// Left-tail quantile of the chi-square distribution with `dof` degrees of
/// freedom.
pub fn chi_square_quantile(dof: f64, p: f64) -> Result<f64> {
    if !(dof > 0.0) {
        return Err(Error::domain("chi_square_quantile", format!("dof = {dof} must be positive")));
    }
    Ok(2.0 * inv_reg_lower_inc_gamma(0.5 * dof, p)?)
}

/// Chi-square CDF.
pub fn chi_square_cdf(dof: f64, x: f64) -> Result<f64> {
    if !(dof > 0.0) {
        return Err(Error::domain("chi_square_cdf", format!("dof = {dof} must be positive")));
    }
    reg_lower_inc_gamma(0.5 * dof, 0.5 * x.max(0.0))
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8, a counter-based generator: each stream id selects an
/// independent keystream, so per-trial streams need no shared state.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

fn check_positive(op: &'static str, name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(op, format!("{name} = {v} must be positive and finite")))
    }
}

/// Draw from the gamma distribution with the given shape and *rate*
/// (density `∝ τ^{shape-1} e^{-rate τ}`).
///
/// Marsaglia-Tsang squeeze method; shapes below one are boosted through
/// `G(a) = G(a + 1) U^{1/a}`.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut RngStream) -> Result<f64> {
    check_positive("sample_gamma", "shape", shape)?;
    check_positive("sample_gamma", "rate", rate)?;
    Ok(standard_gamma(shape, rng) / rate)
}

fn standard_gamma(shape: f64, rng: &mut RngStream) -> f64 {
    if shape < 1.0 {
        let g = standard_gamma(shape + 1.0, rng);
        let u = rng.uniform();
        return g * (u.ln() / shape).exp();
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.standard_normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Draw from the inverse-gamma distribution with shape `alpha` and scale
/// `beta`, as the reciprocal of a gamma draw with rate `beta`.
pub fn sample_inverse_gamma(alpha: f64, beta: f64, rng: &mut RngStream) -> Result<f64> {
    check_positive("sample_inverse_gamma", "alpha", alpha)?;
    check_positive("sample_inverse_gamma", "beta", beta)?;
    Ok(1.0 / sample_gamma(alpha, beta, rng)?)
}

/// Draw from `N(mean, cov)` for symmetric positive semi-definite `cov`.
pub fn sample_mvn(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut RngStream) -> Result<DVector<f64>> {
    if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
        return Err(Error::dimension("sample_mvn", "covariance does not match mean length"));
    }
    let l = linalg::psd_factor(cov, "sample_mvn")?;
    Ok(sample_mvn_factored(mean, &l, rng))
}

/// `mean + L z` with `z ~ N(0, I)`, for a precomputed factor `L`.
pub fn sample_mvn_factored(mean: &DVector<f64>, l: &DMatrix<f64>, rng: &mut RngStream) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.standard_normal());
    mean + l * z
}
