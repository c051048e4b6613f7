//! Monte Carlo tracking benchmark: scenario construction, trial execution,
//! discard policy, aggregation and CSV output.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, KforConfig, PdafConfig};
use crate::error::{Error, Result};
use crate::kalman;
use crate::linalg;
use crate::metrics::{self, FilterSummary, RunSummary, TrialMetrics};
use crate::noise::{NoiseRegime, NoiseSampler};
use crate::nvmf::{self, InverseGammaMixing, NvmfConfig};
use crate::specfun::RngStream;
use crate::statespace::{self, GaussianBelief, LinearModel};

/// Stream id reserved for calibration draws.
const CALIBRATION_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Kf,
    Nvmf,
    Pdaf,
    Kfor,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [FilterKind::Kf, FilterKind::Nvmf, FilterKind::Pdaf, FilterKind::Kfor];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Kf => "kf",
            FilterKind::Nvmf => "nvmf",
            FilterKind::Pdaf => "pdaf",
            FilterKind::Kfor => "kfor",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown filter `{s}` (expected kf, nvmf, pdaf or kfor)")))
    }
}

/// Noise used for the two initialization measurements at `k = -1, 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitNoise {
    /// The configured regime, outliers included.
    Regime,
    /// The configured regime without its outlier branch: the Gaussian
    /// component of the GU mixture, the regime itself otherwise.
    Inlier,
    /// Regular Gaussian noise regardless of the regime.
    Gaussian,
}

impl fmt::Display for InitNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitNoise::Regime => "regime",
            InitNoise::Inlier => "inlier",
            InitNoise::Gaussian => "gaussian",
        })
    }
}

impl FromStr for InitNoise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "regime" => Ok(InitNoise::Regime),
            "inlier" => Ok(InitNoise::Inlier),
            "gaussian" => Ok(InitNoise::Gaussian),
            _ => Err(Error::Config(format!("unknown init noise `{s}` (expected regime, inlier or gaussian)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Gu,
    T,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Gu => "gu",
            NoiseKind::T => "t",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "gu" => Ok(NoiseKind::Gu),
            "t" => Ok(NoiseKind::T),
            _ => Err(Error::Config(format!("unknown noise regime `{s}` (expected gaussian, gu or t)"))),
        }
    }
}

/// Benchmark configuration. Missing JSON fields take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Initial true state `[x, y, ẋ, ẏ]`.
    pub x0: Vec<f64>,
    /// Sampling period.
    pub t: f64,
    /// Process noise intensity.
    pub q: f64,
    pub r_regular: f64,
    pub r_out: f64,
    pub p_out: f64,
    pub rho: f64,
    pub tau: f64,
    pub trials: usize,
    pub updates: usize,
    pub k_star: usize,
    pub seed: u64,
    pub noise: NoiseKind,
    pub filters: Vec<FilterKind>,
    pub nvmf: NvmfConfig,
    /// Mixing shape and scale; calibrated from `r_out`, `rho` and
    /// `r_regular` when absent.
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub calibration_samples: usize,
    /// PDAF clutter density; defaults to the density of the uniform outlier
    /// component weighted by `p_out`.
    pub clutter_density: Option<f64>,
    pub init_noise: InitNoise,
    /// A track counts as lost when its squared error exceeds this multiple
    /// of the Kalman envelope after `k_star`.
    pub divergence_margin: f64,
    /// Tail level of the ANEES acceptance region.
    pub significance: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            x0: vec![100.0, 100.0, 20.0, 10.0],
            t: 3.0,
            q: 1e-6,
            r_regular: 100.0,
            r_out: 1e4,
            p_out: 0.1,
            rho: 0.01,
            tau: 3.0,
            trials: 200,
            updates: 300,
            k_star: 150,
            seed: 0,
            noise: NoiseKind::Gaussian,
            filters: FilterKind::ALL.to_vec(),
            nvmf: NvmfConfig::default(),
            alpha: None,
            beta: None,
            calibration_samples: 100_000,
            clutter_density: None,
            init_noise: InitNoise::Inlier,
            divergence_margin: 1.0,
            significance: 0.05,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must be positive")))
            }
        };
        if self.x0.len() != 4 {
            return Err(Error::Config(format!("x0 has {} entries, expected 4", self.x0.len())));
        }
        positive("t", self.t)?;
        positive("r_regular", self.r_regular)?;
        positive("r_out", self.r_out)?;
        positive("tau", self.tau)?;
        if !(self.divergence_margin >= 1.0) {
            return Err(Error::Config(format!("divergence_margin = {} must be at least 1", self.divergence_margin)));
        }
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return Err(Error::Config(format!("q = {} must be nonnegative", self.q)));
        }
        if !(0.0..=1.0).contains(&self.p_out) {
            return Err(Error::Config(format!("p_out = {} must lie in [0, 1]", self.p_out)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho = {} must lie in (0, 1)", self.rho)));
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return Err(Error::Config(format!("significance = {} must lie in (0, 1)", self.significance)));
        }
        if self.trials == 0 || self.updates == 0 {
            return Err(Error::Config("trials and updates must be at least 1".into()));
        }
        if self.k_star >= self.updates {
            return Err(Error::Config(format!("k_star = {} must be below updates = {}", self.k_star, self.updates)));
        }
        if self.filters.is_empty() {
            return Err(Error::Config("no filters selected".into()));
        }
        if self.alpha.is_some() != self.beta.is_some() {
            return Err(Error::Config("alpha and beta must be given together".into()));
        }
        self.nvmf.validate()
    }

    /// Selected filters, deduplicated, with the Kalman filter always first
    /// (it defines the divergence envelope).
    pub fn filter_order(&self) -> Vec<FilterKind> {
        let mut out = vec![FilterKind::Kf];
        for f in &self.filters {
            if !out.contains(f) {
                out.push(*f);
            }
        }
        out
    }

    fn needs_mixing(&self) -> bool {
        self.noise == NoiseKind::T || self.filters.contains(&FilterKind::Nvmf)
    }
}

/// A validated configuration with every derived quantity resolved.
#[derive(Clone, Debug)]
pub struct Scenario {
    config: ScenarioConfig,
    filters: Vec<FilterKind>,
    model: LinearModel,
    /// `r̄ R̄`, the matched Gaussian measurement covariance.
    r: DMatrix<f64>,
    mixing: Option<InverseGammaMixing>,
    pdaf: PdafConfig,
    kfor: KforConfig,
    noise: NoiseSampler,
    init_noise: NoiseSampler,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let dims = 2;
        let rbar = DMatrix::identity(dims, dims);
        let model = LinearModel::new(
            statespace::cv_transition(config.t),
            statespace::cv_process_noise(config.t, config.q),
            statespace::cv_measurement(dims),
            rbar.clone(),
        )?;
        let mixing = match (config.alpha, config.beta) {
            (Some(a), Some(b)) => Some(InverseGammaMixing::new(a, b)?),
            _ if config.needs_mixing() => Some(calibrate(&config)?.mixing),
            _ => None,
        };
        let clutter = config
            .clutter_density
            .unwrap_or_else(|| baselines::outlier_clutter_density(config.p_out, config.r_out, dims));
        let pdaf = PdafConfig::from_design(config.rho, config.r_out, config.r_regular, clutter, dims)?;
        let kfor = KforConfig::from_design(config.tau, config.r_out)?;
        let gaussian = NoiseRegime::Gaussian { r_regular: config.r_regular, rbar: rbar.clone() };
        let regime = match config.noise {
            NoiseKind::Gaussian => gaussian.clone(),
            NoiseKind::Gu => NoiseRegime::GaussianUniform {
                r_regular: config.r_regular,
                rbar: rbar.clone(),
                p_out: config.p_out,
                r_out: config.r_out,
            },
            NoiseKind::T => {
                let m = mixing.expect("mixing resolved for the t regime");
                NoiseRegime::MultivariateT { alpha: m.alpha(), beta: m.beta(), rbar: rbar.clone() }
            }
        };
        let noise = NoiseSampler::new(regime)?;
        let init_noise = match (config.init_noise, config.noise) {
            (InitNoise::Regime, _) | (InitNoise::Inlier, NoiseKind::T) => noise.clone(),
            (InitNoise::Gaussian, _) | (InitNoise::Inlier, _) => NoiseSampler::new(gaussian)?,
        };
        Ok(Self {
            filters: config.filter_order(),
            r: &rbar * config.r_regular,
            config,
            model,
            mixing,
            pdaf,
            kfor,
            noise,
            init_noise,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn filters(&self) -> &[FilterKind] {
        &self.filters
    }

    pub fn model(&self) -> &LinearModel {
        &self.model
    }

    pub fn mixing(&self) -> Option<InverseGammaMixing> {
        self.mixing
    }

    pub fn pdaf(&self) -> &PdafConfig {
        &self.pdaf
    }

    pub fn kfor(&self) -> &KforConfig {
        &self.kfor
    }

    pub fn measurement_cov(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn update(&self, kind: FilterKind, prior: &GaussianBelief, z: &DVector<f64>) -> Result<GaussianBelief> {
        let h = self.model.measurement();
        match kind {
            FilterKind::Kf => Ok(kalman::kf_update(prior, z, h, &self.r)?.0),
            FilterKind::Nvmf => {
                let mixing = self.mixing.as_ref().expect("mixing resolved when NVMF is selected");
                Ok(nvmf::nvmf_update(prior, z, &self.model, mixing, &self.config.nvmf)?.0)
            }
            FilterKind::Pdaf => baselines::pdaf_update(prior, z, h, &self.r, &self.pdaf),
            FilterKind::Kfor => Ok(baselines::kfor_update(prior, z, h, &self.r, &self.kfor)?.0),
        }
    }

    /// Trace of the matched Kalman covariance for `k = 1..K`: the inverse
    /// of the posterior information recursion started from the two-point
    /// initialization covariance.
    pub fn reference_trace(&self) -> Result<Vec<f64>> {
        let zero = DVector::zeros(2);
        let p0 = statespace::two_point_init(&zero, &zero, self.config.t, &self.r)?;
        let mut info = linalg::spd_inverse(p0.cov(), "reference_trace")?;
        let mut out = Vec::with_capacity(self.config.updates);
        for _ in 0..self.config.updates {
            info = kalman::pcrlb_recursion(&info, &self.model, self.config.r_regular)?;
            out.push(linalg::spd_inverse(&info, "reference_trace")?.trace());
        }
        Ok(out)
    }
}

/// Fits the mixing density to the configuration's design parameters.
pub fn calibrate(config: &ScenarioConfig) -> Result<nvmf::Calibration> {
    let rng = RngStream::new(config.seed, CALIBRATION_STREAM);
    nvmf::calibrate_mixing(
        config.r_out,
        config.rho,
        config.r_regular,
        &DMatrix::identity(2, 2),
        2,
        &nvmf::default_alpha_grid(),
        config.calibration_samples,
        &rng,
    )
}

/// True trajectory of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    /// State one period before `x0`.
    pub x_minus1: DVector<f64>,
    pub x0: DVector<f64>,
    /// `x_1 … x_K`.
    pub states: Vec<DVector<f64>>,
}

/// `x_k = F x_{k-1} + w_k` for `k = 1..K`. The pre-track state `x₋₁` is the
/// noise-free back-propagation `F(-T) x₀`.
pub fn simulate_truth(config: &ScenarioConfig, rng: &mut RngStream) -> Result<Truth> {
    config.validate()?;
    let f = statespace::cv_transition(config.t);
    let q_factor = linalg::psd_factor(&statespace::cv_process_noise(config.t, config.q), "simulate_truth")?;
    let x0 = DVector::from_column_slice(&config.x0);
    let x_minus1 = statespace::cv_transition(-config.t) * &x0;
    let mut states = Vec::with_capacity(config.updates);
    let mut x = x0.clone();
    let zero = DVector::zeros(4);
    for _ in 0..config.updates {
        x = &f * x + crate::specfun::sample_mvn_factored(&zero, &q_factor, rng);
        states.push(x.clone());
    }
    Ok(Truth { x_minus1, x0, states })
}

/// One filter's track in one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterTrack {
    pub filter: FilterKind,
    /// Posterior means for the updates that completed.
    pub estimates: Vec<DVector<f64>>,
    pub cov_trace: Vec<f64>,
    pub metrics: TrialMetrics,
    /// Error message when the filter failed partway through.
    pub failure: Option<String>,
}

impl FilterTrack {
    pub fn lost(&self) -> bool {
        self.failure.is_some() || self.metrics.diverged
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub tracks: Vec<FilterTrack>,
}

impl TrialRecord {
    pub fn track(&self, kind: FilterKind) -> Option<&FilterTrack> {
        self.tracks.iter().find(|t| t.filter == kind)
    }

    pub fn discarded(&self) -> bool {
        self.tracks.iter().any(FilterTrack::lost)
    }
}

/// Runs one trial. Truth and measurement noise use separate substreams of
/// `(seed, trial_id)`, so the trajectory does not depend on the noise
/// regime. Filter errors end that filter's track and are recorded, not
/// propagated.
pub fn run_trial(scenario: &Scenario, trial_id: usize) -> Result<TrialRecord> {
    let cfg = &scenario.config;
    let mut truth_rng = RngStream::new(cfg.seed, 2 * trial_id as u64);
    let mut meas_rng = RngStream::new(cfg.seed, 2 * trial_id as u64 + 1);
    let truth = simulate_truth(cfg, &mut truth_rng)?;
    let h = scenario.model.measurement();
    let z_minus1 = h * &truth.x_minus1 + scenario.init_noise.sample(&mut meas_rng);
    let z0 = h * &truth.x0 + scenario.init_noise.sample(&mut meas_rng);
    let measurements: Vec<DVector<f64>> =
        truth.states.iter().map(|x| h * x + scenario.noise.sample(&mut meas_rng)).collect();
    let init = statespace::two_point_init(&z0, &z_minus1, cfg.t, &scenario.r)?;

    let tracks = scenario
        .filters
        .iter()
        .map(|&kind| {
            let k = cfg.updates;
            let mut track = FilterTrack {
                filter: kind,
                estimates: Vec::with_capacity(k),
                cov_trace: Vec::with_capacity(k),
                metrics: TrialMetrics::with_capacity(k),
                failure: None,
            };
            let mut belief = init.clone();
            for (x, z) in truth.states.iter().zip(&measurements) {
                let prior = statespace::predict(&belief, &scenario.model);
                let step = scenario
                    .update(kind, &prior, z)
                    .and_then(|post| track.metrics.push(x, post.mean(), post.cov()).map(|_| post));
                match step {
                    Ok(post) => {
                        track.estimates.push(post.mean().clone());
                        track.cov_trace.push(post.cov().trace());
                        belief = post;
                    }
                    Err(e) => {
                        track.failure = Some(e.to_string());
                        break;
                    }
                }
            }
            track
        })
        .collect();
    Ok(TrialRecord { trial: trial_id, tracks })
}

/// Runs all trials in parallel, applies the divergence test against the
/// Kalman envelope, discards every trial in which some filter was lost and
/// aggregates the rest.
pub fn run_monte_carlo(scenario: &Scenario) -> Result<(RunSummary, Vec<TrialRecord>)> {
    let cfg = &scenario.config;
    let mut records: Vec<TrialRecord> =
        (0..cfg.trials).into_par_iter().map(|i| run_trial(scenario, i)).collect::<Result<_>>()?;

    let k = cfg.updates;
    let kf_complete: Vec<&[f64]> = records
        .iter()
        .filter_map(|r| r.track(FilterKind::Kf))
        .filter(|t| t.failure.is_none())
        .map(|t| t.metrics.squared_error.as_slice())
        .collect();
    if kf_complete.is_empty() {
        return Err(Error::Run("the Kalman filter failed in every trial".into()));
    }
    let env = metrics::envelope(kf_complete, k);
    for rec in &mut records {
        for track in &mut rec.tracks {
            if track.failure.is_none() {
                track.metrics.diverged = metrics::detect_divergence_with_margin(
                    &track.metrics.squared_error,
                    &env,
                    cfg.k_star,
                    cfg.divergence_margin,
                );
            }
        }
    }
    let summary = summarize(scenario, &records)?;
    Ok((summary, records))
}

/// Aggregates trial records into per-update NRMSE and ANEES over the
/// trials that were not discarded.
pub fn summarize(scenario: &Scenario, records: &[TrialRecord]) -> Result<RunSummary> {
    let cfg = &scenario.config;
    let k = cfg.updates;
    let reference_trace = scenario.reference_trace()?;
    let kept: Vec<&TrialRecord> = records.iter().filter(|r| !r.discarded()).collect();
    let n_eff = kept.len();
    let filters = scenario
        .filters
        .iter()
        .map(|&kind| {
            let mut mse = vec![0.0; k];
            let mut nees = vec![0.0; k];
            for rec in &kept {
                let m = &rec.track(kind).expect("every trial runs every filter").metrics;
                for i in 0..k {
                    mse[i] += m.squared_error[i];
                    nees[i] += m.nees[i];
                }
            }
            let n = n_eff as f64;
            FilterSummary {
                name: kind.name().to_string(),
                nrmse: mse.iter().zip(&reference_trace).map(|(s, tr)| metrics::nrmse(s / n, *tr)).collect(),
                anees: nees.iter().map(|s| s / n).collect(),
                lost_tracks: records.iter().filter_map(|r| r.track(kind)).filter(|t| t.lost()).count(),
            }
        })
        .collect();
    let (interval_low, interval_high) = if n_eff > 0 {
        metrics::consistency_interval(n_eff, 4, cfg.significance)?
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(RunSummary { filters, interval_low, interval_high, n_trials: records.len(), n_eff, reference_trace })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
        other => Error::Io { path: path.to_path_buf(), source: std::io::Error::other(format!("{other:?}")) },
    }
}

/// Writes `summary.csv`, `trials.csv` and `lost_tracks.csv` into `out_dir`.
pub fn emit_csv(records: &[TrialRecord], summary: &RunSummary, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|source| Error::Io { path: out_dir.to_path_buf(), source })?;

    let path = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let mut header = vec!["k".to_string()];
    for f in &summary.filters {
        header.push(format!("{}_nrmse", f.name));
        header.push(format!("{}_anees", f.name));
    }
    header.extend(["interval_low", "interval_high", "reference_trace"].map(String::from));
    w.write_record(&header).map_err(|e| csv_error(&path, e))?;
    for i in 0..summary.reference_trace.len() {
        let mut row = vec![(i + 1).to_string()];
        for f in &summary.filters {
            row.push(f.nrmse[i].to_string());
            row.push(f.anees[i].to_string());
        }
        row.push(summary.interval_low.to_string());
        row.push(summary.interval_high.to_string());
        row.push(summary.reference_trace[i].to_string());
        w.write_record(&row).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.clone(), source })?;

    let path = out_dir.join("trials.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record(["trial", "k", "filter", "se", "nees", "diverged"]).map_err(|e| csv_error(&path, e))?;
    for rec in records {
        for track in &rec.tracks {
            let m = &track.metrics;
            for i in 0..m.squared_error.len() {
                let row = [
                    rec.trial.to_string(),
                    (i + 1).to_string(),
                    track.filter.to_string(),
                    m.squared_error[i].to_string(),
                    m.nees[i].to_string(),
                    track.lost().to_string(),
                ];
                w.write_record(&row).map_err(|e| csv_error(&path, e))?;
            }
        }
    }
    w.flush().map_err(|source| Error::Io { path: path.clone(), source })?;

    let path = out_dir.join("lost_tracks.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record(["filter", "count", "n", "n_eff"]).map_err(|e| csv_error(&path, e))?;
    for f in &summary.filters {
        let row = [f.name.clone(), f.lost_tracks.to_string(), summary.n_trials.to_string(), summary.n_eff.to_string()];
        w.write_record(&row).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|source| Error::Io { path: path.clone(), source })?;
    Ok(())
}
