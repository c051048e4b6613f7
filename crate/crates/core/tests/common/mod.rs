//! Oracles shared by the integration tests. Nothing here calls into the
//! crate's special functions.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

const XK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point
/// Gauss rule.
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let d = h * XK[i];
        let s = f(c - d) + f(c + d);
        k += WK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adapt(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (v, err) = gk15(f, a, b);
    if err <= tol || depth == 0 {
        return v;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss-Kronrod quadrature of `f` on `[a, b]`, starting from
/// `pieces` equal panels, to relative accuracy `rel_tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, pieces: usize, rel_tol: f64) -> f64 {
    let w = (b - a) / pieces as f64;
    let panel = |i: usize| (a + i as f64 * w, a + (i + 1) as f64 * w);
    let coarse: f64 = (0..pieces).map(|i| gk15(&f, panel(i).0, panel(i).1).0.abs()).sum();
    let tol = rel_tol * coarse / pieces as f64;
    (0..pieces).map(|i| adapt(&f, panel(i).0, panel(i).1, tol, 30)).sum()
}

/// `∫₀^∞ g(r) dr` through `r = eˢ`. The integrand must be negligible outside
/// `r ∈ [e^-60, e^60]`.
pub fn integrate_positive(g: impl Fn(f64) -> f64, rel_tol: f64) -> f64 {
    integrate(
        |s: f64| {
            let r = s.exp();
            g(r) * r
        },
        -60.0,
        60.0,
        240,
        rel_tol,
    )
}

pub fn ig_log_pdf(r: f64, alpha: f64, beta: f64) -> f64 {
    alpha * beta.ln() - ln_gamma(alpha) - (alpha + 1.0) * r.ln() - beta / r
}

/// `log N(v; 0, r R̄)` for `R̄` given by its inverse and determinant.
pub fn gauss_log_pdf(v: &DVector<f64>, r: f64, rbar_inv: &DMatrix<f64>, rbar_det: f64) -> f64 {
    let m = v.len() as f64;
    let q = (v.transpose() * rbar_inv * v)[(0, 0)];
    -0.5 * m * (2.0 * std::f64::consts::PI * r).ln() - 0.5 * rbar_det.ln() - 0.5 * q / r
}

/// Marginal density of the variance mixture by quadrature over `r`.
pub fn mixture_density(v: &DVector<f64>, alpha: f64, beta: f64, rbar: &DMatrix<f64>) -> f64 {
    let inv = rbar.clone().try_inverse().unwrap();
    let det = rbar.determinant();
    integrate_positive(|r| (gauss_log_pdf(v, r, &inv, det) + ig_log_pdf(r, alpha, beta)).exp(), 1e-13)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random symmetric positive-definite matrix with eigenvalues in
/// `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(lo..hi)));
    let p = &q * d * q.transpose();
    (&p + p.transpose()) * 0.5
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn mat_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}
