//! Transformed-Gaussian maximum likelihood as a sum of squares.
//!
//! For a model `φ(y, θ) = f(θ) + ε` with `Var ε = σ² C`, `C = L L'`, the
//! maximum-likelihood `θ̂` minimizes `Σ u_i²` where
//!
//! ```text
//! u = L⁻¹ε / J^{1/n},   ln J = Σ ln|∂φ_i/∂y_i| − ln|L|
//! ```
//!
//! and `σ̂² = J^{2/n} S(θ̂)/n`. All determinant work is done in log space.

use crate::error::{Error, Result};

/// Tridiagonal symmetric matrix stored by its diagonal and first subdiagonal.
///
/// `sub[i]` holds `c[i][i-1]`; `sub[0]` is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalCovariance {
    pub diag: Vec<f64>,
    pub sub: Vec<f64>,
}

impl TridiagonalCovariance {
    pub fn new(diag: Vec<f64>, sub: Vec<f64>) -> Result<Self> {
        if diag.len() != sub.len() {
            return Err(Error::LengthMismatch {
                expected: diag.len(),
                actual: sub.len(),
            });
        }
        Ok(TridiagonalCovariance { diag, sub })
    }

    pub fn identity(n: usize) -> Self {
        TridiagonalCovariance {
            diag: vec![1.0; n],
            sub: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn is_diagonal(&self) -> bool {
        self.sub.iter().skip(1).all(|&s| s == 0.0)
    }

    /// `(ln|L|, L⁻¹ z)`.
    pub fn logdet_and_solve(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        logdet_and_solve(&self.diag, &self.sub, z)
    }
}

/// Sequential Cholesky of a tridiagonal `C = L L'` fused with the forward
/// solve `v = L⁻¹ z`. Returns `ln|L| = Σ ln l_ii` and `v` in one O(n) pass.
pub fn logdet_and_solve(diag: &[f64], sub: &[f64], z: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = z.len();
    for len in [diag.len(), sub.len()] {
        if len != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    if n == 0 {
        return Err(Error::LengthMismatch {
            expected: 1,
            actual: 0,
        });
    }
    let mut v = Vec::with_capacity(n);
    let mut logdet = 0.0;
    let mut l_prev = 0.0;
    for i in 0..n {
        let l_sub = if i == 0 { 0.0 } else { sub[i] / l_prev };
        let pivot = diag[i] - l_sub * l_sub;
        // also rejects NaN
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite { index: i, pivot });
        }
        let l_diag = pivot.sqrt();
        logdet += l_diag.ln();
        let carry = if i == 0 { 0.0 } else { l_sub * v[i - 1] };
        v.push((z[i] - carry) / l_diag);
        l_prev = l_diag;
    }
    Ok((logdet, v))
}

/// Sums in ascending order so that any permutation of the terms gives the
/// same bits.
pub fn order_free_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = terms.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Whitened, Jacobian-scaled residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct UVector {
    pub u: Vec<f64>,
    /// `ln J`, including the `−ln|L|` correction and any prior weight.
    pub log_jacobian: f64,
}

impl UVector {
    /// Builds `u = v / exp(ln J / n)` from whitened residuals `v`.
    pub fn from_whitened(v: Vec<f64>, log_jacobian: f64) -> Self {
        let scale = (-log_jacobian / v.len() as f64).exp();
        let u = v.into_iter().map(|x| x * scale).collect();
        UVector { u, log_jacobian }
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    /// `Σu²`, independent of the order of the components.
    pub fn sum_squares(&self) -> f64 {
        order_free_sum(self.u.iter().map(|x| x * x))
    }

    /// `J^{1/n}`.
    pub fn jacobian_root(&self) -> f64 {
        (self.log_jacobian / self.n() as f64).exp()
    }

    /// Folds a prior density into the weighting: `u ← u / p^{1/n}`.
    pub fn with_log_prior(self, log_prior: f64) -> Result<Self> {
        if !log_prior.is_finite() {
            return Err(Error::PriorSupport(format!("log p = {log_prior}")));
        }
        let n = self.n() as f64;
        let scale = (-log_prior / n).exp();
        Ok(UVector {
            u: self.u.into_iter().map(|x| x * scale).collect(),
            log_jacobian: self.log_jacobian + log_prior,
        })
    }
}

/// `u` from raw residuals `ε`, the log-Jacobian of `φ`, and the correlation
/// structure `C`.
pub fn u_from_residuals(
    epsilon: &[f64],
    log_jacobian_phi: f64,
    covariance: &TridiagonalCovariance,
) -> Result<UVector> {
    let (logdet, v) = covariance.logdet_and_solve(epsilon)?;
    Ok(UVector::from_whitened(v, log_jacobian_phi - logdet))
}

/// `J^{1/n}` for a Box–Cox transform of independent responses:
/// `ẏ^{λ−1}` with `ẏ` the geometric mean.
pub fn diagonal_jacobian_geomean(y: &[f64], lambda: f64) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::LengthMismatch {
            expected: 1,
            actual: 0,
        });
    }
    if let Some(&v) = y.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain {
            what: "geometric mean",
            value: v,
        });
    }
    let sum = order_free_sum(y.iter().map(|v| v.ln()));
    Ok(((lambda - 1.0) * sum / y.len() as f64).exp())
}

/// Maximum-likelihood variance estimate and its square root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaHat {
    pub sigma2: f64,
    pub sigma: f64,
}

/// `σ̂² = J^{2/n} S/n`.
pub fn sigma2_hat(u: &UVector) -> SigmaHat {
    let n = u.n() as f64;
    let jn = u.jacobian_root();
    let sigma2 = jn * jn * u.sum_squares() / n;
    SigmaHat {
        sigma2,
        sigma: sigma2.sqrt(),
    }
}

/// `σ̂²` with the `n − p` denominator; reported only, never used in fitting.
pub fn sigma2_hat_unbiased(u: &UVector, n_params: usize) -> Option<f64> {
    let n = u.n();
    (n > n_params).then(|| sigma2_hat(u).sigma2 * n as f64 / (n - n_params) as f64)
}

/// Maximized log-likelihood `−(n/2)(ln(S/n) + ln 2π + 1)`.
pub fn log_likelihood_at_optimum(u: &UVector) -> f64 {
    let n = u.n() as f64;
    let ms = u.sum_squares() / n;
    -(n / 2.0) * (ms.ln() + (2.0 * std::f64::consts::PI).ln() + 1.0)
}

/// A prior density on the optimizer's parametrization.
pub struct PriorDensity {
    pub name: String,
    log_density: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for PriorDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PriorDensity")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

impl PriorDensity {
    pub fn new<F>(name: impl Into<String>, log_density: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        PriorDensity {
            name: name.into(),
            log_density: Box::new(log_density),
        }
    }

    /// Improper flat prior (`ln p = 0`).
    pub fn flat() -> Self {
        Self::new("flat", |_| 0.0)
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        (self.log_density)(theta)
    }
}

/// MAP residuals `ε_i / p(θ)^{1/n}`.
pub fn map_weighted_residuals(
    epsilon: &[f64],
    prior: &PriorDensity,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let log_p = prior.log_density(theta);
    if !log_p.is_finite() {
        return Err(Error::PriorSupport(prior.name.clone()));
    }
    let scale = (-log_p / epsilon.len() as f64).exp();
    Ok(epsilon.iter().map(|e| e * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn dense(diag: &[f64], sub: &[f64]) -> DMatrix<f64> {
        let n = diag.len();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                diag[i]
            } else if i == j + 1 {
                sub[i]
            } else if j == i + 1 {
                sub[j]
            } else {
                0.0
            }
        })
    }

    /// Dense Cholesky oracle: (ln|L|, L⁻¹z).
    fn dense_oracle(diag: &[f64], sub: &[f64], z: &[f64]) -> (f64, Vec<f64>) {
        let chol = dense(diag, sub).cholesky().expect("pd");
        let l = chol.l();
        let logdet = (0..diag.len()).map(|i| l[(i, i)].ln()).sum();
        let v = l
            .solve_lower_triangular(&DVector::from_column_slice(z))
            .unwrap();
        (logdet, v.iter().copied().collect())
    }

    #[test]
    fn identity_and_diagonal() {
        let (ld, v) = logdet_and_solve(&[1.0; 3], &[0.0; 3], &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(ld, 0.0);
        assert_eq!(v, vec![0.3, -1.0, 2.0]);
        let (ld, v) = logdet_and_solve(&[4.0, 9.0], &[0.0, 0.0], &[2.0, 3.0]).unwrap();
        assert!((ld - 6f64.ln()).abs() < 1e-15);
        assert_eq!(v, vec![1.0, 1.0]);
    }

    #[test]
    fn second_difference_matrix_matches_dense() {
        let diag = [2.0, 2.0, 2.0];
        let sub = [0.0, -1.0, -1.0];
        let z = [0.7, -1.3, 2.9];
        let (ld, v) = logdet_and_solve(&diag, &sub, &z).unwrap();
        let (ld_o, v_o) = dense_oracle(&diag, &sub, &z);
        assert!((ld - ld_o).abs() < 1e-12);
        for (a, b) in v.iter().zip(&v_o) {
            assert!((a - b).abs() < 1e-12);
        }
        // |C| = 4 for this matrix
        assert!((2.0 * ld - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn non_positive_definite_is_reported() {
        let err = logdet_and_solve(&[1.0, 1.0], &[0.0, 2.0], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { index: 1, .. }));
        let err = logdet_and_solve(&[-1.0], &[0.0], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { index: 0, .. }));
        assert!(logdet_and_solve(&[1.0], &[0.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn u_identity_covariance_is_epsilon() {
        let eps = [0.5, -0.25, 1.5];
        let u = u_from_residuals(&eps, 0.0, &TridiagonalCovariance::identity(3)).unwrap();
        assert_eq!(u.u, eps.to_vec());
        assert_eq!(u.log_jacobian, 0.0);
    }

    #[test]
    fn doubling_covariance_against_dense() {
        let diag = vec![2.0, 3.0, 2.5, 4.0];
        let sub = vec![0.0, -0.8, 0.4, -1.1];
        let eps = [0.3, -0.9, 1.7, 0.2];
        let c1 = TridiagonalCovariance::new(diag.clone(), sub.clone()).unwrap();
        let c2 = TridiagonalCovariance::new(
            diag.iter().map(|d| 2.0 * d).collect(),
            sub.iter().map(|s| 2.0 * s).collect(),
        )
        .unwrap();
        let u1 = u_from_residuals(&eps, 0.4, &c1).unwrap();
        let u2 = u_from_residuals(&eps, 0.4, &c2).unwrap();
        // |L| scales by 2^{n/2}; v by 1/√2; the two cancel exactly in u
        let n = eps.len() as f64;
        assert!((u1.log_jacobian - u2.log_jacobian - n / 2.0 * 2f64.ln()).abs() < 1e-12);
        for (a, b) in u1.u.iter().zip(&u2.u) {
            assert!((a - b).abs() < 1e-12);
        }
        let (ld, v) = dense_oracle(
            &c2.diag.iter().copied().collect::<Vec<_>>(),
            &c2.sub,
            &eps,
        );
        let jn = ((0.4 - ld) / n).exp();
        for (a, b) in u2.u.iter().zip(&v) {
            assert!((a - b / jn).abs() < 1e-12);
        }
    }

    #[test]
    fn geomean_shortcut() {
        assert_eq!(diagonal_jacobian_geomean(&[3.0, 0.2, 9.0], 1.0).unwrap(), 1.0);
        assert_eq!(diagonal_jacobian_geomean(&[1.0, 1.0, 1.0], 7.0).unwrap(), 1.0);
        assert!(diagonal_jacobian_geomean(&[1.0, 0.0], 0.5).is_err());
        // agrees with the general route: ln J = (λ−1) Σ ln y
        let y = [2.0, 5.0, 0.5, 11.0];
        let lambda = 0.3;
        let log_j: f64 = y.iter().map(|v: &f64| (lambda - 1.0) * v.ln()).sum();
        let u = UVector::from_whitened(vec![1.0; 4], log_j);
        let g = diagonal_jacobian_geomean(&y, lambda).unwrap();
        assert!((u.jacobian_root() - g).abs() < 1e-14);
    }

    #[test]
    fn sigma_and_loglik() {
        let u = UVector {
            u: vec![1.0; 4],
            log_jacobian: 0.0,
        };
        let s = sigma2_hat(&u);
        assert_eq!(s.sigma2, 1.0);
        assert_eq!(s.sigma, 1.0);
        let ll = log_likelihood_at_optimum(&u);
        assert!((ll + 2.0 * ((2.0 * std::f64::consts::PI).ln() + 1.0)).abs() < 1e-14);
        assert_eq!(sigma2_hat_unbiased(&u, 2), Some(2.0));
        assert_eq!(sigma2_hat_unbiased(&u, 4), None);
    }

    #[test]
    fn constant_prior_rescales_uniformly() {
        let eps = [0.4, -1.2, 0.9];
        let flat = PriorDensity::new("const", |_| 1.7);
        let w = map_weighted_residuals(&eps, &flat, &[0.0]).unwrap();
        let ratio = w[0] / eps[0];
        assert!(ratio > 0.0);
        for (a, b) in w.iter().zip(&eps) {
            assert!((a / b - ratio).abs() < 1e-15);
        }
        let zero = PriorDensity::new("zero", |_| f64::NEG_INFINITY);
        assert!(matches!(
            map_weighted_residuals(&eps, &zero, &[0.0]),
            Err(Error::PriorSupport(_))
        ));
        let u = UVector::from_whitened(eps.to_vec(), 0.0);
        let up = u.clone().with_log_prior(0.0).unwrap();
        assert_eq!(u, up);
    }

    fn tridiagonal_pd(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(0.1f64..3.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
        )
            .prop_map(move |(sub_raw, extra, z)| {
                // strict diagonal dominance ⇒ positive definite
                let mut sub = sub_raw;
                sub[0] = 0.0;
                let diag = (0..n)
                    .map(|i| {
                        let right = if i + 1 < n { sub[i + 1].abs() } else { 0.0 };
                        sub[i].abs() + right + extra[i]
                    })
                    .collect();
                (diag, sub, z)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn banded_solver_matches_dense_cholesky(
            (diag, sub, z) in (1usize..=8).prop_flat_map(tridiagonal_pd)
        ) {
            let (ld, v) = logdet_and_solve(&diag, &sub, &z).unwrap();
            let (ld_o, v_o) = dense_oracle(&diag, &sub, &z);
            prop_assert!((ld - ld_o).abs() < 1e-10);
            for (a, b) in v.iter().zip(&v_o) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn sum_of_squares_nonnegative_and_order_free(
            eps in prop::collection::vec(-10.0f64..10.0, 1..30),
            log_j in -5.0f64..5.0,
            seed in any::<u64>(),
        ) {
            let u = u_from_residuals(&eps, log_j, &TridiagonalCovariance::identity(eps.len())).unwrap();
            prop_assert!(u.sum_squares() >= 0.0);
            let mut perm = eps.clone();
            // deterministic shuffle driven by the seed
            let mut s = seed;
            for i in (1..perm.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let up = u_from_residuals(&perm, log_j, &TridiagonalCovariance::identity(eps.len())).unwrap();
            prop_assert!((u.sum_squares() - up.sum_squares()).abs() <= 1e-9 * u.sum_squares().max(1.0));
        }
    }
}
