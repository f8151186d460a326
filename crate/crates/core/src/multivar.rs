//! Multivariate linear SDEs `dY = (AY + b)dt + S dW` observed as
//! `y_i = φ(x_i) = Y(t_i) + ε_i`, `ε_i ~ N(0, V)`, `Y(t₀) ~ N(y₀, V₀)`.
//!
//! Conditional residuals `z_i = y_i − e^{AΔ_i}y_{i−1} − ∫₀^{Δ_i} e^{As}b ds`
//! have unit Jacobian and a block-tridiagonal covariance. The offset integral
//! is read off an augmented matrix exponential, so `A` need not be
//! invertible; for invertible `A` it equals `(e^{AΔ} − I)A⁻¹b`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::UVector;
use crate::transforms::Transform;

/// Largest dimension accepted by [`matrix_exponential`].
pub const MAX_DIM: usize = 64;

/// Dimensions up to this use the Kronecker-product Lyapunov solve.
pub const KRONECKER_MAX_DIM: usize = 8;

/// `e^M` by scaling and squaring with a Padé approximant (nalgebra).
pub fn matrix_exponential(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::LengthMismatch {
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    if m.nrows() > MAX_DIM {
        return Err(Error::Config(format!("matrix dimension {} exceeds {MAX_DIM}", m.nrows())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow(f64::INFINITY));
    }
    let e = m.exp();
    if e.iter().all(|v| v.is_finite()) {
        Ok(e)
    } else {
        Err(Error::Overflow(m.norm()))
    }
}

/// `(e^{AΔ}, ∫₀^Δ e^{As}b ds)` from one exponential of `[[A, b], [0, 0]]Δ`.
pub fn propagator(a: &DMatrix<f64>, b: &DVector<f64>, dt: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let p = a.nrows();
    let mut aug = DMatrix::zeros(p + 1, p + 1);
    aug.view_mut((0, 0), (p, p)).copy_from(&(a * dt));
    aug.view_mut((0, p), (p, 1)).copy_from(&(b * dt));
    let e = matrix_exponential(&aug)?;
    Ok((e.view((0, 0), (p, p)).into_owned(), e.view((0, p), (p, 1)).column(0).into_owned()))
}

fn symmetrize(x: &mut DMatrix<f64>) {
    let t = x.transpose();
    *x = (&*x + t) * 0.5;
}

/// Solves `A X + X A' = Q` through the `p² × p²` Kronecker system.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let eye = DMatrix::<f64>::identity(p, p);
    // column-major vec: vec(AX) = (I⊗A)vec X, vec(XA') = (A⊗I)vec X
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_column_slice(q.as_slice());
    let scale = op.amax().max(f64::MIN_POSITIVE);
    let lu = op.lu();
    let u = lu.u();
    let min_pivot = (0..u.nrows()).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-13 * scale {
        return Err(Error::Singular("lyapunov operator (eigenvalues sum to zero); use the quadrature form"));
    }
    let x = lu.solve(&rhs).ok_or(Error::Singular("lyapunov operator"))?;
    let mut x = DMatrix::from_column_slice(p, p, x.as_slice());
    symmetrize(&mut x);
    Ok(x)
}

/// `‖A X + X A' − Q‖∞`.
pub fn lyapunov_residual(a: &DMatrix<f64>, x: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a * x + x * a.transpose() - q).amax()
}

/// `Var[δ] = ∫₀^Δ e^{As} SS' e^{A's} ds`, as the solution of
/// `A X + X A' = e^{AΔ}SS'e^{A'Δ} − SS'`.
pub fn transition_covariance(a: &DMatrix<f64>, s: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    if a.nrows() > KRONECKER_MAX_DIM {
        return transition_covariance_quadrature(a, s, dt);
    }
    let q = s * s.transpose();
    let e = matrix_exponential(&(a * dt))?;
    let rhs = &e * &q * e.transpose() - &q;
    solve_lyapunov(a, &rhs)
}

/// The same integral by composite Gauss–Legendre quadrature (8 nodes on 32
/// panels); valid for any `A`, including when the Lyapunov operator is
/// singular.
pub fn transition_covariance_quadrature(a: &DMatrix<f64>, s: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    const NODES: [f64; 4] = [
        0.183_434_642_495_649_8,
        0.525_532_409_916_329,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_3,
    ];
    const WEIGHTS: [f64; 4] = [
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    const PANELS: usize = 32;
    let q = s * s.transpose();
    let p = a.nrows();
    let h = dt / PANELS as f64;
    let mut total = DMatrix::zeros(p, p);
    for k in 0..PANELS {
        let mid = (k as f64 + 0.5) * h;
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            for sign in [-1.0, 1.0] {
                let e = matrix_exponential(&(a * (mid + sign * x * h / 2.0)))?;
                total += (&e * &q * e.transpose()) * (w * h / 2.0);
            }
        }
    }
    symmetrize(&mut total);
    Ok(total)
}

/// A multivariate linear SDE with measurement and initial-state noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSdeSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Lower-triangular diffusion factor.
    pub s: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub v0: DMatrix<f64>,
    pub y0: DVector<f64>,
    pub t0: f64,
}

impl LinearSdeSystem {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn check(&self) -> Result<()> {
        let p = self.dim();
        let square = |m: &DMatrix<f64>| m.nrows() == p && m.ncols() == p;
        if !(square(&self.a) && square(&self.s) && square(&self.v) && square(&self.v0))
            || self.b.len() != p
            || self.y0.len() != p
        {
            return Err(Error::Config(format!("system matrices must all be {p}x{p}")));
        }
        for i in 0..p {
            for j in i + 1..p {
                if self.s[(i, j)] != 0.0 {
                    return Err(Error::Config("diffusion factor S must be lower triangular".into()));
                }
            }
        }
        if (&self.v - self.v.transpose()).amax() > 1e-12 || (&self.v0 - self.v0.transpose()).amax() > 1e-12 {
            return Err(Error::Config("V and V0 must be symmetric".into()));
        }
        Ok(())
    }

    /// System with `V = L Lᵀ`, `V₀ = L₀ L₀ᵀ` from Cholesky factors.
    pub fn from_factors(
        a: DMatrix<f64>,
        b: DVector<f64>,
        s: DMatrix<f64>,
        v_factor: &DMatrix<f64>,
        v0_factor: &DMatrix<f64>,
        y0: DVector<f64>,
        t0: f64,
    ) -> Self {
        LinearSdeSystem {
            a,
            b,
            s: s.lower_triangle(),
            v: v_factor.lower_triangle() * v_factor.lower_triangle().transpose(),
            v0: v0_factor.lower_triangle() * v0_factor.lower_triangle().transpose(),
            y0,
            t0,
        }
    }
}

/// Conditional residual blocks and the nonzero blocks of their covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockResiduals {
    pub z: Vec<DVector<f64>>,
    pub diag: Vec<DMatrix<f64>>,
    /// `Cov[z_i, z_{i−1}]`; the first entry is zero.
    pub sub: Vec<DMatrix<f64>>,
}

pub fn multivariate_conditional_residuals(
    y: &[DVector<f64>],
    t: &[f64],
    system: &LinearSdeSystem,
) -> Result<BlockResiduals> {
    system.check()?;
    if y.len() != t.len() {
        return Err(Error::LengthMismatch {
            expected: t.len(),
            actual: y.len(),
        });
    }
    let p = system.dim();
    let mut z = Vec::with_capacity(y.len());
    let mut diag = Vec::with_capacity(y.len());
    let mut sub = Vec::with_capacity(y.len());
    let mut prev_t = system.t0;
    let mut prev_y = system.y0.clone();
    for (i, (yi, &ti)) in y.iter().zip(t).enumerate() {
        if yi.len() != p {
            return Err(Error::LengthMismatch {
                expected: p,
                actual: yi.len(),
            });
        }
        let dt = ti - prev_t;
        if !(dt > 0.0) {
            return Err(Error::NonIncreasingTime { index: i, time: ti });
        }
        let (e, offset) = propagator(&system.a, &system.b, dt)?;
        z.push(yi - &e * &prev_y - offset);
        let carried = if i == 0 { &system.v0 } else { &system.v };
        let mut d = &system.v + &e * carried * e.transpose() + transition_covariance(&system.a, &system.s, dt)?;
        symmetrize(&mut d);
        diag.push(d);
        sub.push(if i == 0 {
            DMatrix::zeros(p, p)
        } else {
            -(&e * &system.v)
        });
        prev_t = ti;
        prev_y = yi.clone();
    }
    Ok(BlockResiduals { z, diag, sub })
}

/// Block version of the banded Cholesky pass: `ln|L|` and `v = L⁻¹z` for
/// the block-tridiagonal matrix given by `diag` and `sub`.
pub fn block_logdet_and_solve(
    diag: &[DMatrix<f64>],
    sub: &[DMatrix<f64>],
    z: &[DVector<f64>],
) -> Result<(f64, Vec<DVector<f64>>)> {
    let mut logdet = 0.0;
    let mut v: Vec<DVector<f64>> = Vec::with_capacity(z.len());
    let mut prev_l: Option<DMatrix<f64>> = None;
    for (i, (d, zi)) in diag.iter().zip(z).enumerate() {
        let (schur, rhs) = match &prev_l {
            None => (d.clone(), zi.clone()),
            Some(l_prev) => {
                // M = B L_prevᵀ⁻¹, i.e. M L_prevᵀ = B
                let m = l_prev
                    .solve_lower_triangular(&sub[i].transpose())
                    .ok_or(Error::NotPositiveDefinite { index: i, pivot: 0.0 })?
                    .transpose();
                (d - &m * m.transpose(), zi - &m * &v[i - 1])
            }
        };
        let chol = schur.cholesky().ok_or(Error::NotPositiveDefinite {
            index: i,
            pivot: f64::NAN,
        })?;
        let l = chol.l();
        logdet += l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
        v.push(
            l.solve_lower_triangular(&rhs)
                .ok_or(Error::NotPositiveDefinite { index: i, pivot: 0.0 })?,
        );
        prev_l = Some(l);
    }
    Ok((logdet, v))
}

/// Change of variables between vectors.
pub trait VectorTransform: Send + Sync + std::fmt::Debug {
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    /// `ln|det ∂y/∂x|`.
    fn log_abs_det_jacobian(&self, x: &DVector<f64>) -> Result<f64>;
    fn inverse(&self, y: &DVector<f64>) -> Result<DVector<f64>>;
}

/// `y = x^C ≡ exp(C ln x)`, i.e. `y_k = Π_j x_j^{C_kj}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerProduct {
    pub c: DMatrix<f64>,
}

impl PowerProduct {
    fn logs(x: &DVector<f64>) -> Result<DVector<f64>> {
        x.iter()
            .map(|&v| {
                if v > 0.0 {
                    Ok(v.ln())
                } else {
                    Err(Error::Domain {
                        what: "power_product",
                        value: v,
                    })
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(DVector::from_vec)
    }
}

impl VectorTransform for PowerProduct {
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((&self.c * Self::logs(x)?).map(f64::exp))
    }

    fn log_abs_det_jacobian(&self, x: &DVector<f64>) -> Result<f64> {
        // ∂y_k/∂x_j = y_k C_kj / x_j
        let lx = Self::logs(x)?;
        let ly = &self.c * &lx;
        Ok(self.c.determinant().abs().ln() + ly.sum() - lx.sum())
    }

    fn inverse(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let ci = self
            .c
            .clone()
            .try_inverse()
            .ok_or(Error::Singular("power-product exponent matrix"))?;
        Ok((ci * Self::logs(y)?).map(f64::exp))
    }
}

/// Scalar transforms applied coordinate by coordinate.
#[derive(Debug, Clone)]
pub struct Componentwise(pub Vec<(std::sync::Arc<dyn Transform>, Vec<f64>)>);

impl VectorTransform for Componentwise {
    fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.0
            .iter()
            .zip(x.iter())
            .map(|((f, p), &v)| f.eval(v, p))
            .collect::<Result<Vec<_>>>()
            .map(DVector::from_vec)
    }

    fn log_abs_det_jacobian(&self, x: &DVector<f64>) -> Result<f64> {
        self.0
            .iter()
            .zip(x.iter())
            .map(|((f, p), &v)| f.derivative(v, p).map(|d| d.abs().ln()))
            .sum()
    }

    fn inverse(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.0
            .iter()
            .zip(y.iter())
            .map(|((f, p), &v)| f.inverse(v, p))
            .collect::<Result<Vec<_>>>()
            .map(DVector::from_vec)
    }
}

/// u-vector of multivariate observations `x_i` at times `t`. The assembled
/// block covariance plays the role of `C`, so an overall scale of
/// `(S, V, V₀)` is absorbed by `σ²` and should be fixed when estimating.
pub fn multivariate_uvector(
    x: &[DVector<f64>],
    t: &[f64],
    system: &LinearSdeSystem,
    transform: &dyn VectorTransform,
) -> Result<UVector> {
    let mut y = Vec::with_capacity(x.len());
    let mut log_phi = 0.0;
    for xi in x {
        y.push(transform.eval(xi)?);
        log_phi += transform.log_abs_det_jacobian(xi)?;
    }
    let r = multivariate_conditional_residuals(&y, t, system)?;
    let (logdet, v) = block_logdet_and_solve(&r.diag, &r.sub, &r.z)?;
    let flat: Vec<f64> = v.iter().flat_map(|b| b.iter().copied()).collect();
    Ok(UVector::from_whitened(flat, log_phi - logdet))
}

/// Drift `A = P⁻¹ΛP` with real eigenvalues `Λ`, for systems without
/// oscillation; `e^{AΔ} = P⁻¹e^{ΛΔ}P`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDrift {
    pub p: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl EigenDrift {
    fn p_inverse(&self) -> Result<DMatrix<f64>> {
        self.p
            .clone()
            .try_inverse()
            .ok_or(Error::Singular("eigenvector matrix P"))
    }

    pub fn drift_matrix(&self) -> Result<DMatrix<f64>> {
        Ok(self.p_inverse()? * DMatrix::from_diagonal(&self.eigenvalues) * &self.p)
    }

    pub fn exp(&self, dt: f64) -> Result<DMatrix<f64>> {
        let d = self.eigenvalues.map(|l| (l * dt).exp());
        Ok(self.p_inverse()? * DMatrix::from_diagonal(&d) * &self.p)
    }
}

fn gaussian_draw(cov: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    // symmetric square root tolerates semidefinite covariances
    let eig = SymmetricEigen::new(cov.clone());
    let n = DVector::from_fn(cov.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let scaled = DVector::from_fn(cov.nrows(), |i, _| eig.eigenvalues[i].max(0.0).sqrt() * n[i]);
    &eig.eigenvectors * scaled
}

/// Exact simulation of the observed `y_i` (transformed scale).
pub fn simulate_system(system: &LinearSdeSystem, t: &[f64], seed: u64) -> Result<Vec<DVector<f64>>> {
    system.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = &system.y0 + gaussian_draw(&system.v0, &mut rng);
    let mut prev = system.t0;
    let mut out = Vec::with_capacity(t.len());
    for (i, &ti) in t.iter().enumerate() {
        let dt = ti - prev;
        if !(dt > 0.0) {
            return Err(Error::NonIncreasingTime { index: i, time: ti });
        }
        let (e, offset) = propagator(&system.a, &system.b, dt)?;
        let q = transition_covariance(&system.a, &system.s, dt)?;
        state = &e * state + offset + gaussian_draw(&q, &mut rng);
        out.push(&state + gaussian_draw(&system.v, &mut rng));
        prev = ti;
    }
    Ok(out)
}
