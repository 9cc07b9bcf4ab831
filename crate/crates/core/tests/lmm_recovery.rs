mod common;

use aging_core::lmm::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use aging_core::{
    apply_dropout, fit_lmm, AgeGrid, CareerPanel, DropoutMechanism, DropoutSpec, SeededRng, TransformSpec,
};
use nalgebra::{DMatrix, Matrix4};

const BETA: [f64; 4] = [0.72, -0.03, -0.12, 0.01];

/// Asymptotic standard errors at the generating parameters of a balanced
/// panel: GLS covariance for beta, one-way ANOVA moments for the variances.
fn oracle_se(n_players: usize, tau2: f64, sigma2: f64) -> ([f64; 4], f64, f64) {
    let ages: Vec<f64> = (21..=39).map(|a| (f64::from(a) - 30.0) / 10.0).collect();
    let n = ages.len();
    let x = DMatrix::from_fn(n, 4, |i, j| ages[i].powi(j as i32));
    let v = DMatrix::from_fn(n, n, |i, j| tau2 + if i == j { sigma2 } else { 0.0 });
    let vinv = v.try_inverse().unwrap();
    let info = x.transpose() * vinv * &x * n_players as f64;
    let info = Matrix4::from_fn(|i, j| info[(i, j)]);
    let cov = info.try_inverse().unwrap();
    let beta_se = [
        cov[(0, 0)].sqrt(),
        cov[(1, 1)].sqrt(),
        cov[(2, 2)].sqrt(),
        cov[(3, 3)].sqrt(),
    ];

    let nf = n as f64;
    let big_n = n_players as f64;
    let lambda = sigma2 + nf * tau2;
    let var_sigma2 = 2.0 * sigma2 * sigma2 / (big_n * (nf - 1.0));
    let var_tau2 = (2.0 * lambda * lambda / big_n + var_sigma2) / (nf * nf);
    (beta_se, var_tau2.sqrt(), var_sigma2.sqrt())
}

fn close(est: f64, truth: f64, se: f64) -> bool {
    (est - truth).abs() <= (0.1 * truth.abs()).max(3.0 * se)
}

#[test]
fn recovers_generating_parameters() {
    let (tau2, sigma2) = (0.02, 0.01);
    let (panel, _) = common::generate(BETA, tau2, sigma2, 1000, 2024);
    let fit = fit_lmm(&panel, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
    assert!(fit.converged);
    assert!(!fit.boundary);
    let (beta_se, tau_se, sig_se) = oracle_se(1000, tau2, sigma2);
    for j in 0..4 {
        assert!(
            close(fit.beta[j], BETA[j], beta_se[j]),
            "beta{j}: {} vs {} (se {})",
            fit.beta[j],
            BETA[j],
            beta_se[j]
        );
    }
    assert!(close(fit.tau2, tau2, tau_se), "tau2 {} (se {tau_se})", fit.tau2);
    assert!(close(fit.sigma2, sigma2, sig_se), "sigma2 {} (se {sig_se})", fit.sigma2);
    assert_eq!(fit.n_players, 1000);
    assert_eq!(fit.n_obs, 19_000);
}

#[test]
fn no_player_effect_gives_small_tau2() {
    let (panel, _) = common::generate(BETA, 0.0, 0.01, 200, 77);
    let fit = fit_lmm(&panel, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
    assert!(fit.tau2 < 0.002, "tau2 = {}", fit.tau2);
}

fn assert_monotone(path: &[f64]) {
    assert!(path.len() >= 2);
    for (k, w) in path.windows(2).enumerate() {
        let slack = 1e-10 * w[0].abs().max(1.0);
        assert!(
            w[1] >= w[0] - slack,
            "log-likelihood fell at step {k}: {} -> {}",
            w[0],
            w[1]
        );
    }
}

#[test]
fn em_loglik_is_monotone_balanced_and_unbalanced() {
    let (panel, _) = common::generate(BETA, 0.004, 0.002, 400, 5);
    let fit = fit_lmm(&panel, DEFAULT_MAX_ITER, 1e-14).unwrap();
    assert_monotone(&fit.loglik_path);

    let dropped = apply_dropout(
        &panel,
        &DropoutSpec::new(DropoutMechanism::Rolling4),
        &TransformSpec::default(),
        &SeededRng::new(5, 1),
    )
    .unwrap();
    assert!(dropped.n_missing() > 0);
    let fit = fit_lmm(&dropped, DEFAULT_MAX_ITER, 1e-14).unwrap();
    assert_monotone(&fit.loglik_path);
    assert!(fit.loglik.is_finite());
}

#[test]
fn fit_ignores_player_order() {
    let (panel, _) = common::generate(BETA, 0.01, 0.005, 150, 9);
    let order: Vec<usize> = (0..150).map(|p| (p * 37 + 11) % 150).collect();
    let shuffled = panel.permuted(&order).unwrap();
    let a = fit_lmm(&panel, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
    let b = fit_lmm(&shuffled, DEFAULT_MAX_ITER, DEFAULT_TOL).unwrap();
    for j in 0..4 {
        assert!((a.beta[j] - b.beta[j]).abs() < 1e-10);
    }
    assert!((a.tau2 - b.tau2).abs() < 1e-12);
    assert!((a.sigma2 - b.sigma2).abs() < 1e-12);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn single_player_is_rejected() {
    let grid = AgeGrid::default();
    let values: Vec<f64> = grid.ages().map(|a| 0.7 + 0.001 * f64::from(a)).collect();
    let panel = CareerPanel::fully_observed(vec!["solo".into()], grid, values, TransformSpec::default()).unwrap();
    assert!(fit_lmm(&panel, DEFAULT_MAX_ITER, DEFAULT_TOL).is_err());
}
