//! Estimation of reducible stochastic differential equations.
//!
//! A reducible SDE becomes linear, `dY = (β₀ + β₁Y)dt + σ_p dW`, after a
//! change of variables `Y = φ(X, θ)`. Observations of `X` (with optional
//! measurement error) then have a Gaussian likelihood after transformation,
//! and maximizing it is equivalent to minimizing the sum of squares of a
//! whitened, Jacobian-scaled residual vector `u(θ)`. Any nonlinear
//! least-squares solver can then do the work.
//!
//! The crate is organized bottom-up:
//!
//! - [`transforms`]: the variable changes `φ` and their derivatives.
//! - [`gaussian`]: banded Cholesky whitening, `σ̂²`, log-likelihood, priors.
//! - [`sde`]: conditional residuals and their tridiagonal covariance.
//! - [`hierarchy`]: multi-unit models with global and local parameters.
//! - [`optimize`] and [`estimate`]: fitting.
//! - [`simulate`], [`multivar`]: exact sampling and the multivariate case.
//! - [`data`], [`config`], [`report`], [`run`]: the batch front end.

pub mod config;
pub mod data;
pub mod error;
pub mod estimate;
pub mod gaussian;
pub mod hierarchy;
pub mod multivar;
pub mod optimize;
pub mod regression;
pub mod report;
pub mod run;
pub mod sde;
pub mod simulate;
pub mod transforms;

pub use error::{DataError, Error, Result};
pub use estimate::{FitResult, Strategy};
pub use hierarchy::{Drift, ParamSpec, ParameterBinding, Scope, SdeModel, UnitData};
pub use transforms::{Transform, TransformRegistry};
