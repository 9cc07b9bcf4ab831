//! Cubic random-intercept linear mixed model
//!
//! `y_pq = beta0 + b_p + beta1 x + beta2 x^2 + beta3 x^3 + e_pq` with
//! `b_p ~ N(0, tau2)`, `e_pq ~ N(0, sigma2)` and `x = (age - 30) / 10`.
//! Fitted by maximum likelihood: each iteration takes the GLS update of the
//! fixed effects at the current variance components, then an EM update of
//! `tau2` and `sigma2` from the posterior moments of the intercepts. Both
//! steps can only increase the marginal likelihood.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::CareerPanel;

pub const DEFAULT_MAX_ITER: usize = 500;
pub const DEFAULT_TOL: f64 = 1e-8;
const TAU2_FLOOR: f64 = 1e-12;

/// Centered, scaled cubic age basis `[1, x, x^2, x^3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeBasis {
    pub center: f64,
    pub scale: f64,
}

impl Default for AgeBasis {
    fn default() -> Self {
        Self {
            center: 30.0,
            scale: 10.0,
        }
    }
}

impl AgeBasis {
    pub fn x(&self, age: f64) -> f64 {
        (age - self.center) / self.scale
    }

    pub fn row(&self, age: f64) -> [f64; 4] {
        let x = self.x(age);
        [1.0, x, x * x, x * x * x]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub beta: [f64; 4],
    pub tau2: f64,
    pub sigma2: f64,
    pub loglik: f64,
    pub n_players: usize,
    pub n_obs: usize,
    pub converged: bool,
    /// `tau2` hit zero during the fit.
    pub boundary: bool,
    pub iterations: usize,
    pub basis: AgeBasis,
    /// Marginal log-likelihood after each iteration (index 0 is the start point).
    #[serde(skip)]
    pub loglik_path: Vec<f64>,
}

impl LmmFit {
    /// A fit assembled from known parameters, for simulation.
    pub fn from_parameters(beta: [f64; 4], tau2: f64, sigma2: f64) -> Result<Self> {
        if !(tau2 >= 0.0 && sigma2 >= 0.0) || beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("variance components must be nonnegative".into()));
        }
        Ok(Self {
            beta,
            tau2,
            sigma2,
            loglik: f64::NAN,
            n_players: 0,
            n_obs: 0,
            converged: true,
            boundary: tau2 == 0.0,
            iterations: 0,
            basis: AgeBasis::default(),
            loglik_path: Vec::new(),
        })
    }

    pub fn mean_at(&self, age: f64) -> f64 {
        let r = self.basis.row(age);
        r.iter().zip(&self.beta).map(|(a, b)| a * b).sum()
    }

    /// Key-value text: one `key = value` line per field.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        for (i, b) in self.beta.iter().enumerate() {
            let _ = writeln!(s, "beta{i} = {b}");
        }
        let _ = writeln!(s, "tau2 = {}", self.tau2);
        let _ = writeln!(s, "sigma2 = {}", self.sigma2);
        let _ = writeln!(s, "loglik = {}", self.loglik);
        let _ = writeln!(s, "converged = {}", self.converged);
        let _ = writeln!(s, "boundary = {}", self.boundary);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "n_players = {}", self.n_players);
        let _ = writeln!(s, "n_obs = {}", self.n_obs);
        let _ = writeln!(s, "center = {}", self.basis.center);
        let _ = writeln!(s, "scale = {}", self.basis.scale);
        s
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut kv = std::collections::HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Parse(format!("fit line {}: expected key = value", n + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |k: &str| -> Result<f64> {
            kv.get(k)
                .ok_or_else(|| Error::Parse(format!("fit file missing {k}")))?
                .parse()
                .map_err(|_| Error::Parse(format!("fit file: bad {k}")))
        };
        let opt_num = |k: &str, d: f64| kv.get(k).and_then(|v| v.parse().ok()).unwrap_or(d);
        let flag = |k: &str, d: bool| kv.get(k).and_then(|v| v.parse().ok()).unwrap_or(d);
        let beta = [num("beta0")?, num("beta1")?, num("beta2")?, num("beta3")?];
        let tau2 = num("tau2")?;
        let sigma2 = num("sigma2")?;
        if !(tau2 >= 0.0 && sigma2 > 0.0) {
            return Err(Error::Parse("fit file: variance components out of range".into()));
        }
        Ok(Self {
            beta,
            tau2,
            sigma2,
            loglik: opt_num("loglik", f64::NAN),
            n_players: opt_num("n_players", 0.0) as usize,
            n_obs: opt_num("n_obs", 0.0) as usize,
            converged: flag("converged", true),
            boundary: flag("boundary", tau2 == 0.0),
            iterations: opt_num("iterations", 0.0) as usize,
            basis: AgeBasis {
                center: opt_num("center", 30.0),
                scale: opt_num("scale", 10.0),
            },
            loglik_path: Vec::new(),
        })
    }
}

/// Population curve at `age` (random intercept set to zero).
pub fn predict_mean(fit: &LmmFit, age: i32) -> f64 {
    fit.mean_at(f64::from(age))
}

/// Sufficient statistics of one player's observed cells.
#[derive(Debug, Clone)]
pub(crate) struct PlayerStats {
    pub n: usize,
    pub xtx: Matrix4<f64>,
    pub xsum: Vector4<f64>,
    pub xty: Vector4<f64>,
    pub ysum: f64,
    pub yy: f64,
}

pub(crate) fn player_stats(panel: &CareerPanel, basis: &AgeBasis) -> Vec<PlayerStats> {
    let grid = panel.grid();
    (0..panel.n_players())
        .map(|p| {
            let mut st = PlayerStats {
                n: 0,
                xtx: Matrix4::zeros(),
                xsum: Vector4::zeros(),
                xty: Vector4::zeros(),
                ysum: 0.0,
                yy: 0.0,
            };
            for (q, y) in panel.observed_in_row(p) {
                let x = Vector4::from(basis.row(f64::from(grid.age_at(q))));
                st.n += 1;
                st.xtx += x * x.transpose();
                st.xsum += x;
                st.xty += x * y;
                st.ysum += y;
                st.yy += y * y;
            }
            st
        })
        .collect()
}

/// Residual sum of squares and residual sum for one player at `beta`.
fn residual_moments(st: &PlayerStats, beta: &Vector4<f64>) -> (f64, f64) {
    let rss = st.yy - 2.0 * beta.dot(&st.xty) + (beta.transpose() * st.xtx * beta)[(0, 0)];
    let rsum = st.ysum - st.xsum.dot(beta);
    (rss.max(0.0), rsum)
}

fn marginal_loglik(stats: &[PlayerStats], beta: &Vector4<f64>, tau2: f64, sigma2: f64) -> f64 {
    stats
        .iter()
        .filter(|s| s.n > 0)
        .map(|s| {
            let n = s.n as f64;
            let (rss, rsum) = residual_moments(s, beta);
            let d = sigma2 + n * tau2;
            let quad = (rss - tau2 * rsum * rsum / d) / sigma2;
            -0.5 * (n * (2.0 * PI).ln() + (n - 1.0) * sigma2.ln() + d.ln() + quad)
        })
        .sum()
}

fn gls_beta(stats: &[PlayerStats], tau2: f64, sigma2: f64) -> Result<Vector4<f64>> {
    let mut a = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    for s in stats.iter().filter(|s| s.n > 0) {
        let c = tau2 / (sigma2 + s.n as f64 * tau2);
        a += s.xtx - s.xsum * s.xsum.transpose() * c;
        rhs += s.xty - s.xsum * (s.ysum * c);
    }
    a.cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or_else(|| Error::Singular("fixed-effect normal equations".into()))
}

/// Fits the cubic random-intercept model to the observed cells of `panel`.
/// Stops when the relative log-likelihood change drops below `tol`; a fit
/// that exhausts `max_iter` is returned with `converged = false`.
pub fn fit_lmm(panel: &CareerPanel, max_iter: usize, tol: f64) -> Result<LmmFit> {
    let basis = AgeBasis::default();
    let stats = player_stats(panel, &basis);
    let n_players = stats.iter().filter(|s| s.n > 0).count();
    let n_obs: usize = stats.iter().map(|s| s.n).sum();
    if n_players < 2 || n_obs < 5 {
        return Err(Error::Precondition(format!(
            "mixed model needs >= 2 players and >= 5 observed cells, got {n_players} and {n_obs}"
        )));
    }

    // OLS start; split the residual variance evenly.
    let beta_ols = gls_beta(&stats, 0.0, 1.0)?;
    let rss: f64 = stats.iter().map(|s| residual_moments(s, &beta_ols).0).sum();
    let total = (rss / n_obs.saturating_sub(4).max(1) as f64).max(1e-12);
    let mut tau2 = 0.5 * total;
    let mut sigma2 = 0.5 * total;
    let mut beta = beta_ols;
    let mut boundary = false;

    let mut ll = marginal_loglik(&stats, &beta, tau2, sigma2);
    let mut path = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        beta = gls_beta(&stats, tau2, sigma2)?;

        let mut tau_acc = 0.0;
        let mut sig_acc = 0.0;
        for s in stats.iter().filter(|s| s.n > 0) {
            let n = s.n as f64;
            let (rss, rsum) = residual_moments(s, &beta);
            let d = sigma2 + n * tau2;
            let post_mean = tau2 * rsum / d;
            let post_var = sigma2 * tau2 / d;
            tau_acc += post_mean * post_mean + post_var;
            sig_acc += rss - 2.0 * post_mean * rsum + n * (post_mean * post_mean + post_var);
        }
        tau2 = tau_acc / n_players as f64;
        sigma2 = (sig_acc / n_obs as f64).max(1e-300);
        if tau2 < TAU2_FLOOR {
            tau2 = 0.0;
            boundary = true;
        }

        let next = marginal_loglik(&stats, &beta, tau2, sigma2);
        if !next.is_finite() {
            return Err(Error::NonFinite("log-likelihood".into()));
        }
        path.push(next);
        let change = (next - ll).abs() / ll.abs().max(1.0);
        ll = next;
        if change < tol {
            converged = true;
            break;
        }
    }

    Ok(LmmFit {
        beta: [beta[0], beta[1], beta[2], beta[3]],
        tau2,
        sigma2,
        loglik: ll,
        n_players,
        n_obs,
        converged,
        boundary,
        iterations,
        basis,
        loglik_path: path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::AgeGrid;
    use crate::transform::TransformSpec;

    #[test]
    fn flat_and_centered_predictions() {
        let flat = LmmFit::from_parameters([0.7, 0.0, 0.0, 0.0], 0.01, 0.01).unwrap();
        for age in 21..=39 {
            assert_eq!(predict_mean(&flat, age), 0.7);
        }
        let linear = LmmFit::from_parameters([0.0, 1.0, 0.0, 0.0], 0.01, 0.01).unwrap();
        assert_eq!(predict_mean(&linear, 30), 0.0);
        assert!((predict_mean(&linear, 40) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_player_is_rejected() {
        let grid = AgeGrid::default();
        let values = (0..grid.len()).map(|i| 0.6 + 0.01 * i as f64).collect();
        let panel = CareerPanel::fully_observed(vec!["a".into()], grid, values, TransformSpec::default()).unwrap();
        assert!(matches!(fit_lmm(&panel, 100, 1e-8), Err(Error::Precondition(_))));
    }

    #[test]
    fn kv_round_trip() {
        let mut fit = LmmFit::from_parameters([0.7, -0.03, -0.12, 0.01], 0.004, 0.002).unwrap();
        fit.loglik = 123.5;
        fit.n_players = 10;
        let back = LmmFit::from_kv_str(&fit.to_kv_string()).unwrap();
        assert_eq!(back.beta, fit.beta);
        assert_eq!(back.tau2, fit.tau2);
        assert_eq!(back.sigma2, fit.sigma2);
        assert_eq!(back.loglik, fit.loglik);
        assert_eq!(back.n_players, 10);
        assert!(LmmFit::from_kv_str("beta0 = 1").is_err());
    }

    #[test]
    fn ols_identity_when_tau_zero() {
        // Balanced, fully observed, deterministic values.
        let grid = AgeGrid::default();
        let players: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
        let values: Vec<f64> = (0..players.len() * grid.len())
            .map(|i| 0.6 + ((i * 7919) % 97) as f64 * 1e-3)
            .collect();
        let panel = CareerPanel::fully_observed(players, grid, values.clone(), TransformSpec::default()).unwrap();
        let basis = AgeBasis::default();
        let stats = player_stats(&panel, &basis);
        let gls = gls_beta(&stats, 0.0, 0.3).unwrap();

        // direct OLS via QR on the stacked design
        let n = values.len();
        let x = nalgebra::DMatrix::from_fn(n, 4, |i, j| basis.row(f64::from(grid.age_at(i % grid.len())))[j]);
        let y = nalgebra::DVector::from_vec(values);
        let ols = (x.transpose() * &x).lu().solve(&(x.transpose() * y)).unwrap();
        for j in 0..4 {
            assert!((gls[j] - ols[j]).abs() < 1e-10);
        }
    }
}
