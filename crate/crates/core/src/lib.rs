//! Robust state estimation under heavy-tailed measurement noise.
//!
//! The crate implements the normal variance mixture filter (NVMF), an
//! EM-based MAP update whose measurement noise is a Gaussian scale mixture
//! with inverse-gamma mixing, together with the standard Kalman filter, two
//! robust baselines (KFOR and a single-measurement PDAF) and a Monte Carlo
//! harness for a constant-velocity tracking benchmark.
//!
//! Module map:
//!
//! - [`specfun`]: gamma-family special functions and seeded sampling.
//! - [`statespace`]: linear models, prediction, two-point initialization.
//! - [`kalman`]: covariance/information-form updates and the PCRLB recursion.
//! - [`nvmf`]: the NVMF update, its closed forms and mixing calibration.
//! - [`baselines`]: KFOR and PDAF.
//! - [`noise`]: the three simulated measurement-noise regimes.
//! - [`metrics`]: NRMSE, ANEES, consistency intervals and divergence.
//! - [`harness`]: scenario configuration, Monte Carlo runner, CSV output.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod kalman;
pub mod linalg;
pub mod metrics;
pub mod noise;
pub mod nvmf;
pub mod specfun;
pub mod statespace;

pub use error::{Error, Result};
pub use statespace::{GaussianBelief, LinearModel};
