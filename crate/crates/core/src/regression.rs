//! Box–Cox transformation of both sides of a simple linear regression:
//! `bc(y, λ_y) = β₀ + β₁·bc(x, λ_x) + ε`, with independent `ε ~ N(0, σ²)`.
//!
//! The Jacobian is diagonal, so `J^{1/n}` reduces to `ẏ^{λ_y − 1}` with `ẏ`
//! the geometric mean of the responses.

use crate::error::{Error, Result};
use crate::gaussian::{self, UVector};
use crate::transforms::{box_cox, box_cox_regressor};

/// Flat parameter order: `beta0, beta1, lambda_x, lambda_y`.
pub const PARAM_NAMES: [&str; 4] = ["beta0", "beta1", "lambda_x", "lambda_y"];

#[derive(Debug, Clone, PartialEq)]
pub struct BoxCoxRegression {
    x: Vec<f64>,
    y: Vec<f64>,
    mean_log_y: f64,
}

impl BoxCoxRegression {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: y.len(),
                actual: x.len(),
            });
        }
        // validates y > 0
        gaussian::diagonal_jacobian_geomean(&y, 0.0)?;
        let mean_log_y = gaussian::order_free_sum(y.iter().map(|v| v.ln())) / y.len() as f64;
        Ok(BoxCoxRegression { x, y, mean_log_y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Raw residuals `ε_i` on the transformed scale.
    pub fn residuals(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != 4 {
            return Err(Error::LengthMismatch {
                expected: 4,
                actual: theta.len(),
            });
        }
        let (b0, b1, lx, ly) = (theta[0], theta[1], theta[2], theta[3]);
        self.x
            .iter()
            .zip(&self.y)
            .map(|(&x, &y)| Ok(box_cox(y, ly)? - b0 - b1 * box_cox_regressor(x, lx)?))
            .collect()
    }

    /// `ln J = n (λ_y − 1) mean(ln y)`.
    pub fn log_jacobian(&self, lambda_y: f64) -> f64 {
        self.len() as f64 * (lambda_y - 1.0) * self.mean_log_y
    }

    pub fn uvector(&self, theta: &[f64]) -> Result<UVector> {
        let eps = self.residuals(theta)?;
        Ok(UVector::from_whitened(eps, self.log_jacobian(theta[3])))
    }

    /// Exact `−ln L` with σ as a fifth, explicit parameter.
    pub fn negative_log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != 5 {
            return Err(Error::LengthMismatch {
                expected: 5,
                actual: theta.len(),
            });
        }
        let eps = self.residuals(&theta[..4])?;
        let n = self.len() as f64;
        let s2 = theta[4] * theta[4];
        let ss: f64 = eps.iter().map(|e| e * e).sum();
        Ok(0.5 * n * (2.0 * std::f64::consts::PI * s2).ln() + ss / (2.0 * s2)
            - self.log_jacobian(theta[3]))
    }
}
