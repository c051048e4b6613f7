//! Error, consistency and divergence statistics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::specfun;

/// Per-update statistics of one filter in one trial.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialMetrics {
    /// `‖x - x̂‖²` for each update `k = 1..K`.
    pub squared_error: Vec<f64>,
    /// `x̃' P̂⁻¹ x̃` for each update.
    pub nees: Vec<f64>,
    pub diverged: bool,
}

impl TrialMetrics {
    pub fn with_capacity(k: usize) -> Self {
        Self { squared_error: Vec::with_capacity(k), nees: Vec::with_capacity(k), diverged: false }
    }

    /// Records the error of one estimate.
    pub fn push(&mut self, truth: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<()> {
        let e = truth - mean;
        self.squared_error.push(e.norm_squared());
        self.nees.push(linalg::inv_quad_form(cov, &e, "TrialMetrics::push")?);
        Ok(())
    }
}

/// Aggregated results for one filter.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSummary {
    pub name: String,
    pub nrmse: Vec<f64>,
    pub anees: Vec<f64>,
    pub lost_tracks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub filters: Vec<FilterSummary>,
    pub interval_low: f64,
    pub interval_high: f64,
    pub n_trials: usize,
    pub n_eff: usize,
    /// Trace of the matched Kalman covariance per update.
    pub reference_trace: Vec<f64>,
}

impl RunSummary {
    pub fn filter(&self, name: &str) -> Option<&FilterSummary> {
        self.filters.iter().find(|f| f.name == name)
    }
}

/// `√(MSE / tr P)`.
pub fn nrmse(mse: f64, kf_cov_trace: f64) -> f64 {
    (mse / kf_cov_trace).sqrt()
}

/// `(1/N) Σ x̃' P̂⁻¹ x̃`.
pub fn anees(errors: &[DVector<f64>], covs: &[DMatrix<f64>]) -> Result<f64> {
    if errors.is_empty() || errors.len() != covs.len() {
        return Err(Error::dimension("anees", "need one covariance per error and at least one of each"));
    }
    let mut sum = 0.0;
    for (e, p) in errors.iter().zip(covs) {
        sum += linalg::inv_quad_form(p, e, "anees")?;
    }
    Ok(sum / errors.len() as f64)
}

/// Two-sided acceptance region for the ANEES of `n` trials of an
/// `l`-dimensional state at tail level `s`:
/// `[χ²_{nl}(s/2) / n, χ²_{nl}(1 - s/2) / n]`.
pub fn consistency_interval(n: usize, l: usize, s: f64) -> Result<(f64, f64)> {
    if n * l == 0 || !(s > 0.0 && s < 1.0) {
        return Err(Error::domain("consistency_interval", format!("n = {n}, l = {l}, s = {s}")));
    }
    let dof = (n * l) as f64;
    let low = specfun::chi_square_quantile(dof, 0.5 * s)?;
    let high = specfun::chi_square_quantile(dof, 1.0 - 0.5 * s)?;
    Ok((low / n as f64, high / n as f64))
}

/// True iff the squared error strictly exceeds the envelope at some update
/// after `k_star`. Slice index `i` holds update `k = i + 1`.
pub fn detect_divergence(se_trial: &[f64], kf_envelope: &[f64], k_star: usize) -> bool {
    detect_divergence_with_margin(se_trial, kf_envelope, k_star, 1.0)
}

/// [`detect_divergence`] against `margin` times the envelope.
pub fn detect_divergence_with_margin(se_trial: &[f64], kf_envelope: &[f64], k_star: usize, margin: f64) -> bool {
    se_trial
        .iter()
        .zip(kf_envelope)
        .enumerate()
        .any(|(i, (se, env))| i + 1 > k_star && *se > margin * env)
}

/// Pointwise maximum over trials.
pub fn envelope<'a>(series: impl IntoIterator<Item = &'a [f64]>, k: usize) -> Vec<f64> {
    let mut env = vec![f64::NEG_INFINITY; k];
    for s in series {
        for (e, v) in env.iter_mut().zip(s) {
            *e = e.max(*v);
        }
    }
    env
}

/// Fraction of `values` from update `k_star + 1` on that lie in `[low, high]`.
pub fn fraction_inside(values: &[f64], k_star: usize, low: f64, high: f64) -> f64 {
    let tail = &values[k_star.min(values.len())..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().filter(|v| (low..=high).contains(*v)).count() as f64 / tail.len() as f64
}

/// Mean of `values` from update `k_star + 1` on.
pub fn steady_state_mean(values: &[f64], k_star: usize) -> f64 {
    let tail = &values[k_star.min(values.len())..];
    tail.iter().sum::<f64>() / tail.len() as f64
}
