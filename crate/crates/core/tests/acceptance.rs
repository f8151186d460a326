//! Acceptance criteria. Each test prints one PASS/FAIL line (visible with
//! `--nocapture`) before asserting.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reducible_sde::config::ModelConfig;
use reducible_sde::data::{self, Columns, Duplicates};
use reducible_sde::estimate;
use reducible_sde::multivar;
use reducible_sde::regression::BoxCoxRegression;
use reducible_sde::report::FitReport;
use reducible_sde::run;
use reducible_sde::sde::{self, Multipliers, SdeParams};
use reducible_sde::simulate::{self, TrajectorySpec};
use reducible_sde::transforms::{Identity, PowerRichards, Transform};
use reducible_sde::TransformRegistry;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn fit_config(name: &str) -> FitReport {
    let cfg = ModelConfig::load(&crate_dir().join("configs").join(name)).expect("config loads");
    run::run_fit(&cfg, &TransformRegistry::with_builtins()).expect("fit runs")
}

fn verdict(criterion: &str, ok: bool, detail: String) {
    println!("{criterion}: {} | {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{criterion}: {detail}");
}

fn close(actual: f64, expected: f64, tol: f64) -> bool {
    (actual - expected).abs() <= tol
}

fn close_rel(actual: f64, expected: f64, tol: f64) -> bool {
    (actual - expected).abs() <= tol * expected.abs()
}

/// Units of the tree dataset in the order the reference per-unit tables use.
const REFERENCE_UNIT_ORDER: [&str; 14] = [
    "329", "327", "325", "307", "331", "311", "315", "321", "319", "301", "323", "309", "303", "305",
];

fn gag() -> BoxCoxRegression {
    let ds = data::load_csv(
        &crate_dir().join("data/gagurine.csv"),
        &Columns::new("Age", "GAG", None),
        Duplicates::Allow,
    )
    .unwrap();
    let u = &ds.units[0];
    BoxCoxRegression::new(u.t.clone(), u.x.clone()).unwrap()
}

#[test]
fn c1_gag_boxcox_regression() {
    const PARAM_TOL: f64 = 1e-3;
    const RSS_TOL: f64 = 0.5;
    const SIGMA_TOL: f64 = 1e-4;
    let r = fit_config("example1.json");
    let f = &r.fit;
    let expected = [3.3142, -0.3502, 0.4249, 0.1032];
    let params_ok = f.theta.iter().zip(expected).all(|(&a, e)| close(a, e, PARAM_TOL));
    let ok = params_ok && close(f.rss, 3214.0, RSS_TOL) && close(f.sigma, 0.383853, SIGMA_TOL) && f.converged;
    verdict(
        "criterion 1 (GAG regression)",
        ok,
        format!("theta {:?} rss {:.4} sigma {:.6}", f.theta, f.rss, f.sigma),
    );
}

#[test]
fn c2_gag_direct_likelihood_agrees() {
    const NLL_TOL: f64 = 1e-2;
    const PARAM_TOL: f64 = 1e-3;
    let model = gag();
    let direct = estimate::fit_direct_regression(&model, [3.0, -0.4, 0.4, 0.1, 0.4]).unwrap();
    let lsq = fit_config("example1.json").fit;
    let mut lsq_params = lsq.theta.clone();
    lsq_params.push(lsq.sigma);
    let mut direct_params = direct.theta.clone();
    direct_params[4] = direct_params[4].abs();
    let agree = lsq_params
        .iter()
        .zip(&direct_params)
        .all(|(a, b)| close(*a, *b, PARAM_TOL));
    let ok = close(direct.value, 810.6863, NLL_TOL) && agree && close(-lsq.log_likelihood, direct.value, NLL_TOL);
    verdict(
        "criterion 2 (GAG direct likelihood)",
        ok,
        format!("nll {:.5} direct {direct_params:?} lsq {lsq_params:?}", direct.value),
    );
}

#[test]
fn c3_tree_additive_noise() {
    const REL_TOL: f64 = 1e-3;
    const SIGMA_TOL: f64 = 1e-5;
    const LOGLIK_TOL: f64 = 1e-3;
    let r = fit_config("example2-additive.json");
    let f = &r.fit;
    let expected = [("a", 72.5459), ("b", 0.0967), ("c", 0.5024), ("eta", 1.0)];
    let params_ok = expected
        .iter()
        .all(|&(n, e)| close_rel(f.get(n).unwrap(), e, REL_TOL));
    let ok = params_ok
        && close(f.sigma_m.unwrap(), 0.04865072, SIGMA_TOL)
        && close(f.log_likelihood, -3.9882, LOGLIK_TOL)
        && f.is_at_bound("eta") == Some(true);
    verdict(
        "criterion 3 (tree 301 additive)",
        ok,
        format!(
            "theta {:?} sigma_m {:.8} logL {:.5} eta at bound {:?}",
            f.theta,
            f.sigma_m.unwrap(),
            f.log_likelihood,
            f.is_at_bound("eta")
        ),
    );
}

#[test]
fn c4_tree_multiplicative_noise() {
    const REL_TOL: f64 = 1e-3;
    const SIGMA_TOL: f64 = 1e-5;
    const LOGLIK_TOL: f64 = 1e-3;
    let f = fit_config("example2-mult.json").fit;
    let expected = [("a", 77.10687), ("b", 0.08405), ("c", 0.54946)];
    let params_ok = expected
        .iter()
        .all(|&(n, e)| close_rel(f.get(n).unwrap(), e, REL_TOL));
    let ok = params_ok
        && close(f.sigma_m.unwrap(), 0.01576683, SIGMA_TOL)
        && close(f.log_likelihood, -3.568224, LOGLIK_TOL);
    verdict(
        "criterion 4 (tree 301 multiplicative)",
        ok,
        format!("theta {:?} sigma_m {:.8} logL {:.6}", f.theta, f.sigma_m.unwrap(), f.log_likelihood),
    );
}

fn local_by_reference_order(r: &FitReport, name: &str) -> Vec<f64> {
    REFERENCE_UNIT_ORDER
        .iter()
        .map(|u| r.fit.get(&format!("{name}[{u}]")).expect("local value present"))
        .collect()
}

#[test]
fn c5_all_trees_local_asymptote() {
    const LOCAL_TOL: f64 = 1e-2;
    const GLOBAL_TOL: f64 = 1e-4;
    const LOGLIK_TOL: f64 = 1e-3;
    const IC_TOL: f64 = 1e-2;
    let reference = [
        68.36651, 69.11596, 71.87593, 70.69002, 70.44039, 71.38285, 72.90628, 70.92199, 74.01902, 74.77264,
        75.44943, 76.41765, 76.91871, 78.84126,
    ];
    let r = fit_config("example3-alocal.json");
    let f = &r.fit;
    let a = local_by_reference_order(&r, "a");
    let worst = a.iter().zip(reference).map(|(x, p)| (x - p).abs()).fold(0.0, f64::max);
    let ok = worst <= LOCAL_TOL
        && close(f.get("b").unwrap(), 0.09472, GLOBAL_TOL)
        && close(f.get("c").unwrap(), 0.49182, GLOBAL_TOL)
        && close(f.log_likelihood, -88.39581, LOGLIK_TOL)
        && close(f.aic, 210.7916, IC_TOL)
        && close(f.bic, 252.1155, IC_TOL);
    verdict(
        "criterion 5 (all trees, local a)",
        ok,
        format!(
            "max |a - a_ref| {worst:.2e} b {:.5} c {:.5} logL {:.5} AIC {:.4} BIC {:.4}",
            f.get("b").unwrap(),
            f.get("c").unwrap(),
            f.log_likelihood,
            f.aic,
            f.bic
        ),
    );
}

#[test]
fn c6_all_trees_local_rate() {
    const GLOBAL_TOL: f64 = 1e-3;
    const LOGLIK_TOL: f64 = 1e-3;
    const IC_TOL: f64 = 1e-2;
    let r = fit_config("example3-blocal.json");
    let f = &r.fit;
    let ok = close(f.get("a").unwrap(), 73.08143, GLOBAL_TOL)
        && close(f.get("c").unwrap(), 0.49156, GLOBAL_TOL)
        && close(f.log_likelihood, -85.15201, LOGLIK_TOL)
        && close(f.aic, 204.3040, IC_TOL)
        && close(f.bic, 245.6279, IC_TOL);
    // the per-tree rates, reported to 4 significant digits
    let reference_b = [
        0.08912, 0.09082, 0.09495, 0.09053, 0.08915, 0.09111, 0.09496, 0.08957, 0.09680, 0.09819, 0.09843,
        0.09984, 0.09984, 0.10313,
    ];
    let b = local_by_reference_order(&r, "b");
    let worst_b = b.iter().zip(reference_b).map(|(x, p)| (x - p).abs()).fold(0.0, f64::max);
    verdict(
        "criterion 6 (all trees, local b)",
        ok && worst_b <= 1e-5,
        format!(
            "a {:.5} c {:.5} max |b - b_ref| {worst_b:.1e} logL {:.5} AIC {:.4} BIC {:.4}",
            f.get("a").unwrap(),
            f.get("c").unwrap(),
            f.log_likelihood,
            f.aic,
            f.bic
        ),
    );
}

#[test]
fn c7_all_trees_local_asymptote_and_rate() {
    const LOGLIK_TOL: f64 = 1e-2;
    const IC_TOL: f64 = 0.05;
    let f = fit_config("example3-ablocal.json").fit;
    let ok = f.df == 30
        && close(f.log_likelihood, -76.87568, LOGLIK_TOL)
        && close(f.aic, 213.7514, IC_TOL)
        && close(f.bic, 286.6759, IC_TOL);
    verdict(
        "criterion 7 (all trees, local a and b)",
        ok,
        format!(
            "df {} logL {:.5} AIC {:.4} BIC {:.4} (best maximum found; see decisions ledger)",
            f.df, f.log_likelihood, f.aic, f.bic
        ),
    );
}

// ---- property suite ----

fn tree_301() -> (Vec<f64>, Vec<f64>) {
    let ds = data::load_csv(
        &crate_dir().join("data/loblolly.csv"),
        &Columns::new("age", "height", Some("Seed")),
        Duplicates::Reject,
    )
    .unwrap()
    .select(&["301".into()])
    .unwrap();
    (ds.units[0].t.clone(), ds.units[0].x.clone())
}

#[test]
fn c8a_conditional_residual_map_has_unit_jacobian() {
    const DET_TOL: f64 = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for n in 1..=5 {
        for _ in 0..20 {
            let mut t = Vec::new();
            let mut acc = 0.0;
            for _ in 0..n {
                acc += rng.random_range(0.1..3.0);
                t.push(acc);
            }
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let params = SdeParams {
                beta0: rng.random_range(-1.0..1.0),
                beta1: rng.random_range(-1.0..0.5),
                ..Default::default()
            };
            let h = 1e-5;
            let jac = DMatrix::from_fn(n, n, |i, j| {
                let (mut up, mut dn) = (y.clone(), y.clone());
                up[j] += h;
                dn[j] -= h;
                let zu = sde::conditional_residuals(&up, &t, 0.3, &params).unwrap().z;
                let zd = sde::conditional_residuals(&dn, &t, 0.3, &params).unwrap().z;
                (zu[i] - zd[i]) / (2.0 * h)
            });
            worst = worst.max((jac.determinant().abs() - 1.0).abs());
        }
    }
    verdict(
        "criterion 8a (unit Jacobian of y -> z)",
        worst < DET_TOL,
        format!("max ||det| - 1| = {worst:.2e}"),
    );
}

/// `−ln L` from the dense covariance of the transformed observations,
/// factorized by a plain Cholesky.
#[allow(clippy::too_many_arguments)]
fn dense_oracle_nll(
    x: &[f64],
    t: &[f64],
    beta0: f64,
    beta1: f64,
    y0: f64,
    (sp, sm, s0): (f64, f64, f64),
    phi: impl Fn(f64) -> f64,
    dphi: impl Fn(f64) -> f64,
) -> f64 {
    let n = x.len();
    let mean = |s: f64| {
        let e = (beta1 * s).exp();
        y0 * e + beta0 * (e - 1.0) / beta1
    };
    let r = DVector::from_fn(n, |i, _| phi(x[i]) - mean(t[i]));
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let (si, sj) = (t[i], t[j]);
        let m = si.min(sj);
        let process = sp * sp * (beta1 * (si + sj - 2.0 * m)).exp() * ((2.0 * beta1 * m).exp() - 1.0) / (2.0 * beta1);
        let init = s0 * s0 * (beta1 * (si + sj)).exp();
        process + init + if i == j { sm * sm } else { 0.0 }
    });
    let chol = cov.cholesky().expect("covariance is positive definite");
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let w = chol.solve(&r);
    let jac: f64 = x.iter().map(|&xi| dphi(xi).abs().ln()).sum();
    0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * logdet + 0.5 * r.dot(&w) - jac
}

#[test]
fn c8b_least_squares_route_matches_dense_oracle() {
    const REL_TOL: f64 = 1e-10;
    let (t, x) = tree_301();
    let c = 0.5;
    let mut worst: f64 = 0.0;
    for &(sp, sm, s0) in &[(0.05, 0.03, 0.02), (0.1, 0.0, 0.0), (0.02, 0.08, 0.0), (0.07, 0.01, 0.3)] {
        let (beta0, beta1) = (0.0967 * 72.5f64.powf(c), -0.0967);
        let sigma2: f64 = sp * sp + sm * sm;
        let params = SdeParams {
            beta0,
            beta1,
            eta: sm * sm / sigma2,
            eta0: s0 * s0 / sigma2,
            x0: 0.0,
            t0: 0.0,
        };
        let w = sde::whiten_unit(&x, &t, &params, &PowerRichards, &[c], &Multipliers::default()).unwrap();
        let n = x.len() as f64;
        let ss: f64 = w.v.iter().map(|v| v * v).sum();
        let nll = 0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() + ss / (2.0 * sigma2) - w.log_jacobian;
        let oracle = dense_oracle_nll(
            &x,
            &t,
            beta0,
            beta1,
            0.0,
            (sp, sm, s0),
            |h| h.powf(c),
            |h| c * h.powf(c - 1.0),
        );
        worst = worst.max(((nll - oracle) / oracle).abs());
    }
    verdict(
        "criterion 8b (dense Cholesky oracle)",
        worst < REL_TOL,
        format!("max relative difference {worst:.2e}"),
    );
}

#[test]
fn c8c_rate_continuity_at_zero() {
    const TOL: f64 = 1e-5;
    // unit-scale series: on large-valued data the true first-order change
    // du/dβ₁ · 1e-7 alone exceeds the tolerance
    let t = [0.5, 1.0, 1.5, 2.5, 3.0, 4.0];
    let x = [0.3, 0.9, 1.2, 1.9, 2.4, 2.8];
    let base = SdeParams {
        beta0: 0.7,
        beta1: 0.0,
        eta: 0.3,
        eta0: 0.1,
        ..Default::default()
    };
    let u0 = sde::uvector(&x, &t, &base, &Identity, &[]).unwrap().u;
    let mut worst: f64 = 0.0;
    // both sides of the branch threshold as well as the stated ±1e-7
    for b1 in [1e-7, -1e-7, 1e-11, -1e-11, 1e-13, -1e-13] {
        let p = SdeParams { beta1: b1, ..base };
        let u = sde::uvector(&x, &t, &p, &Identity, &[]).unwrap().u;
        worst = worst.max(u.iter().zip(&u0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    verdict(
        "criterion 8c (beta1 -> 0 continuity)",
        worst < TOL,
        format!("max component difference {worst:.2e}"),
    );
}

fn random_stable(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(p, p, |_, _| rng.random_range(-0.5..0.5));
    m - DMatrix::identity(p, p) * (1.0 + p as f64 * 0.5)
}

fn taylor_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let p = m.nrows();
    let mut term = DMatrix::identity(p, p);
    let mut sum = term.clone();
    for k in 1..80 {
        term = &term * m / k as f64;
        sum += &term;
    }
    sum
}

/// Adaptive Simpson on every entry of a matrix-valued integrand.
fn adaptive_simpson(f: &dyn Fn(f64) -> DMatrix<f64>, a: f64, b: f64, tol: f64) -> DMatrix<f64> {
    fn simpson(fa: &DMatrix<f64>, fm: &DMatrix<f64>, fb: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
        (fa + fm * 4.0 + fb) * (h / 6.0)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> DMatrix<f64>,
        a: f64,
        b: f64,
        fa: DMatrix<f64>,
        fm: DMatrix<f64>,
        fb: DMatrix<f64>,
        whole: DMatrix<f64>,
        tol: f64,
        depth: u32,
    ) -> DMatrix<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(&fa, &flm, &fm, m - a);
        let right = simpson(&fm, &frm, &fb, b - m);
        let diff = &left + &right - &whole;
        if depth == 0 || diff.amax() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        recurse(f, a, m, fa, flm, fm.clone(), left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(&fa, &fm, &fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

#[test]
fn c8d_lyapunov_residual_and_quadrature_oracle() {
    const RESIDUAL_TOL: f64 = 1e-10;
    const ORACLE_TOL: f64 = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_res, mut worst_oracle): (f64, f64) = (0.0, 0.0);
    for p in [2usize, 3, 4] {
        for _ in 0..3 {
            let a = random_stable(p, &mut rng);
            let s = DMatrix::from_fn(p, p, |i, j| if j <= i { rng.random_range(-0.5..0.5) } else { 0.0 });
            let q = &s * s.transpose();
            let x = multivar::solve_lyapunov(&a, &q).unwrap();
            worst_res = worst_res.max(multivar::lyapunov_residual(&a, &x, &q));

            let dt = rng.random_range(0.2..2.0);
            let var = multivar::transition_covariance(&a, &s, dt).unwrap();
            let integrand = |u: f64| {
                let e = taylor_exp(&(&a * u));
                &e * &q * e.transpose()
            };
            let oracle = adaptive_simpson(&integrand, 0.0, dt, 1e-13);
            worst_oracle = worst_oracle.max((var - oracle).amax());
        }
    }
    verdict(
        "criterion 8d (Lyapunov residual, quadrature oracle)",
        worst_res < RESIDUAL_TOL && worst_oracle < ORACLE_TOL,
        format!("residual {worst_res:.2e} oracle {worst_oracle:.2e}"),
    );
}

#[test]
fn c8e_chapman_kolmogorov_additivity() {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for p in [1usize, 2, 3, 5] {
        let a = random_stable(p, &mut rng);
        let s = DMatrix::from_fn(p, p, |i, j| if j <= i { rng.random_range(-0.6..0.6) } else { 0.0 });
        let (d1, d2) = (rng.random_range(0.1..1.5), rng.random_range(0.1..1.5));
        let whole = multivar::transition_covariance(&a, &s, d1 + d2).unwrap();
        let e2 = multivar::matrix_exponential(&(&a * d2)).unwrap();
        let v1 = multivar::transition_covariance(&a, &s, d1).unwrap();
        let v2 = multivar::transition_covariance(&a, &s, d2).unwrap();
        let parts = &e2 * v1 * e2.transpose() + v2;
        worst = worst.max((whole - parts).amax());
    }
    verdict(
        "criterion 8e (Chapman-Kolmogorov additivity)",
        worst < TOL,
        format!("max entry difference {worst:.2e}"),
    );
}

fn recovery_spec(seed: u64) -> TrajectorySpec {
    TrajectorySpec {
        beta0: 1.0,
        beta1: -0.3,
        x0: 0.0,
        t0: 0.0,
        noise: sde::NoiseLevels {
            sigma_p: 0.1,
            sigma_m: 0.0,
            sigma_0: 0.0,
        },
        times: (1..=50).map(|k| 0.5 * k as f64).collect(),
        transform: Arc::new(Identity) as Arc<dyn Transform>,
        transform_params: vec![],
        seed,
    }
}

#[test]
fn c8f_simulate_then_estimate_recovery() {
    const REPLICATES: usize = 200;
    const UNITS: usize = 20;
    const MAX_Z: f64 = 3.0;
    let study = simulate::recovery_study(&recovery_spec(2024), UNITS, REPLICATES).unwrap();
    let z = study.z_scores();
    let summary: Vec<String> = study
        .names
        .iter()
        .enumerate()
        .map(|(k, n)| format!("{n}: mean {:.5} se {:.5} z {:.2}", study.mean(k), study.standard_error(k), z[k]))
        .collect();
    let ok = z.iter().all(|z| z.abs() < MAX_Z) && study.converged == REPLICATES;
    verdict(
        "criterion 8f (simulate-then-estimate recovery)",
        ok,
        format!("{} | converged {}/{REPLICATES}", summary.join("; "), study.converged),
    );
}

#[test]
fn c8g_seeded_simulation_is_bit_exact() {
    let spec = recovery_spec(77);
    let a = simulate::simulate_units(&spec, 5).unwrap();
    let b = simulate::simulate_units(&spec, 5).unwrap();
    let bits = |u: &[reducible_sde::UnitData]| -> Vec<u64> {
        u.iter().flat_map(|u| u.x.iter().map(|v| v.to_bits())).collect()
    };
    let other = simulate::simulate_units(&recovery_spec(78), 5).unwrap();
    let ok = bits(&a) == bits(&b) && bits(&a) != bits(&other);
    verdict("criterion 8g (seeded determinism)", ok, format!("{} values compared", bits(&a).len()));
}

#[test]
fn c9_mixed_effects_documented_out_of_scope() {
    let readme = std::fs::read_to_string(crate_dir().join("../../README.md")).unwrap_or_default();
    let lower = readme.to_lowercase();
    let ok = readme.contains("Example 4") && lower.contains("out of scope") && lower.contains("random local parameters");
    verdict(
        "criterion 9 (mixed effects out of scope)",
        ok,
        "README states the exclusion and points to the random local parameters section".into(),
    );
}
