//! Multilevel multiple imputation with a two-level normal Gibbs sampler.
//!
//! Model: `y_pq = x_q' beta + b_p + e_pq`, `b_p ~ N(0, tau2)`,
//! `e_pq ~ N(0, sigma2_p)`, with a separate residual variance per player and
//! `x_q` the centered cubic age basis of [`crate::lmm`]. Priors: flat on
//! `beta`; scaled inverse chi-square with one degree of freedom on every
//! `sigma2_p` and on `tau2`, scale equal to the residual variance of an ML
//! mixed-model fit to the observed cells.
//!
//! Each chain is an independent sampler. Parameter draws condition on the
//! observed cells only; missing cells are drawn from the predictive at the
//! end of every iteration and the last draw is the chain's imputation.

use log::warn;
use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmm::{self, AgeBasis, PlayerStats};
use crate::panel::{CareerPanel, CellState};
use crate::rng::{stable_hash, SeededRng};

const PRIOR_DF: f64 = 1.0;
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiConfig {
    /// Number of imputations (independent chains).
    pub m: usize,
    /// Gibbs iterations per chain.
    pub n_iter: usize,
    pub seed: u64,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self {
            m: 5,
            n_iter: 30,
            seed: 0,
        }
    }
}

impl MiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!("m = {} (need >= 2)", self.m)));
        }
        if self.n_iter < 1 {
            return Err(Error::InvalidArgument("n_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean and sd of one chain's imputed values after one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 1-based.
    pub chain: usize,
    /// 1-based.
    pub iteration: usize,
    pub imputed_mean: f64,
    pub imputed_sd: f64,
}

#[derive(Debug, Clone)]
pub struct ImputationRun {
    /// One completed panel per chain; every cell is observed.
    pub completed: Vec<CareerPanel>,
    /// Chain-major, `m * n_iter` rows.
    pub traces: Vec<TraceRow>,
    pub config: MiConfig,
    /// Mask of the incomplete input panel.
    pub input_mask: Vec<CellState>,
    pub prior_scale: f64,
    pub warnings: Vec<String>,
}

impl ImputationRun {
    pub fn m(&self) -> usize {
        self.completed.len()
    }

    /// Chain `chain`'s imputed values, row-major over the input's missing cells.
    pub fn imputed_values(&self, chain: usize) -> Vec<f64> {
        let panel = &self.completed[chain];
        self.input_mask
            .iter()
            .zip(panel.values())
            .filter(|(m, _)| **m == CellState::Missing)
            .map(|(_, v)| *v)
            .collect()
    }

    /// `chain,iteration,imputed_mean,imputed_sd`
    pub fn write_traces_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["chain", "iteration", "imputed_mean", "imputed_sd"])?;
        for t in &self.traces {
            w.write_record([
                t.chain.to_string(),
                t.iteration.to_string(),
                t.imputed_mean.to_string(),
                t.imputed_sd.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Data-side quantities shared by all chains.
#[derive(Debug)]
struct Model {
    rows: Vec<[f64; 4]>,
    stats: Vec<PlayerStats>,
    observed: Vec<Vec<(usize, f64)>>,
    missing: Vec<Vec<usize>>,
    pooled_variance: Vec<bool>,
    player_keys: Vec<u64>,
    prior_scale: f64,
    warnings: Vec<String>,
}

impl Model {
    fn new(panel: &CareerPanel) -> Result<Self> {
        let basis = AgeBasis::default();
        let grid = panel.grid();
        let rows: Vec<[f64; 4]> = grid.ages().map(|a| basis.row(f64::from(a))).collect();
        let stats = lmm::player_stats(panel, &basis);
        let observed: Vec<Vec<(usize, f64)>> = (0..panel.n_players())
            .map(|p| panel.observed_in_row(p).collect())
            .collect();
        let missing: Vec<Vec<usize>> = (0..panel.n_players())
            .map(|p| (0..panel.n_ages()).filter(|&q| !panel.is_observed(p, q)).collect())
            .collect();

        let mut warnings = Vec::new();
        let pooled_variance: Vec<bool> = observed.iter().map(|o| o.len() < 2).collect();
        for (p, pooled) in pooled_variance.iter().enumerate() {
            if *pooled {
                let msg = format!(
                    "player {} has {} observed cells; residual variance drawn from the pooled conditional",
                    panel.players()[p],
                    observed[p].len()
                );
                warn!("{msg}");
                warnings.push(msg);
            }
        }

        let prior_scale = match lmm::fit_lmm(panel, lmm::DEFAULT_MAX_ITER, lmm::DEFAULT_TOL) {
            Ok(fit) if fit.sigma2.is_finite() && fit.sigma2 > 0.0 => fit.sigma2,
            _ => {
                let msg = "mixed-model fit failed; prior scale from OLS residual variance".to_string();
                warn!("{msg}");
                warnings.push(msg);
                let beta = ols(&stats)?;
                pooled_residual_variance(&rows, &observed, &beta)
            }
        };

        Ok(Self {
            rows,
            stats,
            observed,
            missing,
            pooled_variance,
            player_keys: panel.players().iter().map(|id| stable_hash(id)).collect(),
            prior_scale: prior_scale.max(VARIANCE_FLOOR),
            warnings,
        })
    }

    fn n_players(&self) -> usize {
        self.stats.len()
    }

    fn fitted(&self, beta: &[f64; 4], q: usize) -> f64 {
        self.rows[q].iter().zip(beta).map(|(x, b)| x * b).sum()
    }
}

fn ols(stats: &[PlayerStats]) -> Result<Vector4<f64>> {
    let mut a = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    for s in stats {
        a += s.xtx;
        rhs += s.xty;
    }
    a.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Singular("OLS normal equations for the age basis".into()))
}

fn pooled_residual_variance(rows: &[[f64; 4]], observed: &[Vec<(usize, f64)>], beta: &Vector4<f64>) -> f64 {
    let mut rss = 0.0;
    let mut n = 0usize;
    for obs in observed {
        for &(q, y) in obs {
            let fit: f64 = rows[q].iter().zip(beta.iter()).map(|(x, b)| x * b).sum();
            rss += (y - fit) * (y - fit);
            n += 1;
        }
    }
    rss / n.saturating_sub(4).max(1) as f64
}

/// Sampler state of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub beta: [f64; 4],
    /// Random intercepts, one per player.
    pub b: Vec<f64>,
    /// Residual variances, one per player.
    pub sigma2: Vec<f64>,
    pub tau2: f64,
    /// Current draws for each player's missing cells, in age order.
    pub imputed: Vec<Vec<f64>>,
    global_rng: ChaCha8Rng,
    player_rngs: Vec<ChaCha8Rng>,
}

impl ChainState {
    fn imputed_moments(&self) -> (f64, f64) {
        let n: usize = self.imputed.iter().map(Vec::len).sum();
        if n == 0 {
            return (f64::NAN, f64::NAN);
        }
        let mean = self.imputed.iter().flatten().sum::<f64>() / n as f64;
        let ss: f64 = self.imputed.iter().flatten().map(|v| (v - mean) * (v - mean)).sum();
        let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        (mean, sd)
    }
}

fn check_preconditions(panel: &CareerPanel) -> Result<()> {
    if panel.n_missing() == 0 {
        return Err(Error::Precondition("panel has no missing cells to impute".into()));
    }
    let usable = (0..panel.n_players())
        .filter(|&p| panel.observed_in_row(p).count() >= 2)
        .count();
    if usable < 2 {
        return Err(Error::Precondition(format!(
            "imputation needs >= 2 players with >= 2 observed cells, found {usable}"
        )));
    }
    Ok(())
}

fn init_state(model: &Model, key: &SeededRng) -> Result<ChainState> {
    let beta_v = ols(&model.stats)?;
    let beta = [beta_v[0], beta_v[1], beta_v[2], beta_v[3]];
    let s2 = pooled_residual_variance(&model.rows, &model.observed, &beta_v).max(VARIANCE_FLOOR);

    let mut means = Vec::new();
    for obs in &model.observed {
        if obs.is_empty() {
            continue;
        }
        let r: f64 = obs.iter().map(|&(q, y)| y - model.fitted(&beta, q)).sum();
        means.push(r / obs.len() as f64);
    }
    let tau2 = if means.len() > 1 {
        let m = means.iter().sum::<f64>() / means.len() as f64;
        means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (means.len() - 1) as f64
    } else {
        0.0
    }
    .max(VARIANCE_FLOOR);

    let global_rng = key.named("global").rng();
    let mut player_rngs: Vec<ChaCha8Rng> = model.player_keys.iter().map(|k| key.substream(*k).rng()).collect();
    let sd = s2.sqrt();
    let imputed = model
        .missing
        .iter()
        .zip(player_rngs.iter_mut())
        .map(|(cells, r)| {
            cells
                .iter()
                .map(|&q| {
                    let z: f64 = StandardNormal.sample(r);
                    model.fitted(&beta, q) + sd * z
                })
                .collect()
        })
        .collect();

    Ok(ChainState {
        beta,
        b: vec![0.0; model.n_players()],
        sigma2: vec![s2; model.n_players()],
        tau2,
        imputed,
        global_rng,
        player_rngs,
    })
}

/// Starting state of a chain: OLS fixed effects, zero intercepts, pooled
/// residual variance for every player, `tau2` from the spread of per-player
/// mean residuals, and missing cells drawn around the OLS curve.
pub fn initialize_chain(panel: &CareerPanel, rng: &SeededRng) -> Result<ChainState> {
    check_preconditions(panel)?;
    let model = Model::new(panel)?;
    init_state(&model, rng)
}

fn scaled_inv_chi2<R: Rng>(rng: &mut R, df: f64, sum_sq: f64) -> f64 {
    let chi = ChiSquared::new(df).expect("positive degrees of freedom");
    let x: f64 = chi.sample(rng);
    ((sum_sq) / x.max(f64::MIN_POSITIVE)).max(VARIANCE_FLOOR)
}

/// One Gibbs sweep: beta, intercepts, residual variances, tau2, missing cells.
fn gibbs_step(model: &Model, st: &mut ChainState) -> Result<()> {
    let prior_ss = PRIOR_DF * model.prior_scale;

    // (a) beta | b, sigma2_p: precision-weighted least squares over observed cells.
    let mut prec = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    for (p, s) in model.stats.iter().enumerate() {
        if s.n == 0 {
            continue;
        }
        let w = 1.0 / st.sigma2[p];
        prec += s.xtx * w;
        rhs += (s.xty - s.xsum * st.b[p]) * w;
    }
    let chol = prec
        .cholesky()
        .ok_or_else(|| Error::Singular("beta full conditional".into()))?;
    let mean = chol.solve(&rhs);
    let z = Vector4::from_fn(|_, _| StandardNormal.sample(&mut st.global_rng));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Singular("beta draw".into()))?;
    let beta_v = mean + noise;
    st.beta = [beta_v[0], beta_v[1], beta_v[2], beta_v[3]];

    // (b) b_p | beta, sigma2_p, tau2
    for p in 0..model.n_players() {
        let obs = &model.observed[p];
        let rsum: f64 = obs.iter().map(|&(q, y)| y - model.fitted(&st.beta, q)).sum();
        let precision = obs.len() as f64 / st.sigma2[p] + 1.0 / st.tau2;
        let m = rsum / st.sigma2[p] / precision;
        let z: f64 = StandardNormal.sample(&mut st.player_rngs[p]);
        st.b[p] = m + z / precision.sqrt();
    }

    // (c) sigma2_p | beta, b_p
    let mut pooled_ss = 0.0;
    let mut pooled_n = 0usize;
    for p in 0..model.n_players() {
        let ss: f64 = model.observed[p]
            .iter()
            .map(|&(q, y)| {
                let r = y - model.fitted(&st.beta, q) - st.b[p];
                r * r
            })
            .sum();
        pooled_ss += ss;
        pooled_n += model.observed[p].len();
        if !model.pooled_variance[p] {
            let n = model.observed[p].len() as f64;
            st.sigma2[p] = scaled_inv_chi2(&mut st.player_rngs[p], PRIOR_DF + n, prior_ss + ss);
        }
    }
    if model.pooled_variance.iter().any(|x| *x) {
        let s2 = scaled_inv_chi2(&mut st.global_rng, PRIOR_DF + pooled_n as f64, prior_ss + pooled_ss);
        for p in 0..model.n_players() {
            if model.pooled_variance[p] {
                st.sigma2[p] = s2;
            }
        }
    }

    // (d) tau2 | b
    let bss: f64 = st.b.iter().map(|b| b * b).sum();
    st.tau2 = scaled_inv_chi2(&mut st.global_rng, PRIOR_DF + model.n_players() as f64, prior_ss + bss);

    // (e) missing y_pq | beta, b_p, sigma2_p
    for p in 0..model.n_players() {
        let sd = st.sigma2[p].sqrt();
        let b = st.b[p];
        let r = &mut st.player_rngs[p];
        for (slot, &q) in st.imputed[p].iter_mut().zip(&model.missing[p]) {
            let z: f64 = StandardNormal.sample(r);
            *slot = model.fitted(&st.beta, q) + b + sd * z;
        }
    }
    Ok(())
}

fn run_chain(
    model: &Model,
    panel: &CareerPanel,
    key: &SeededRng,
    chain: usize,
    n_iter: usize,
) -> Result<(CareerPanel, Vec<TraceRow>)> {
    let mut st = init_state(model, key)?;
    let mut trace = Vec::with_capacity(n_iter);
    for it in 0..n_iter {
        gibbs_step(model, &mut st)?;
        let (imputed_mean, imputed_sd) = st.imputed_moments();
        trace.push(TraceRow {
            chain: chain + 1,
            iteration: it + 1,
            imputed_mean,
            imputed_sd,
        });
    }

    let w = panel.n_ages();
    let mut values = panel.values().to_vec();
    for (p, cells) in model.missing.iter().enumerate() {
        for (&q, v) in cells.iter().zip(&st.imputed[p]) {
            values[p * w + q] = *v;
        }
    }
    let completed = CareerPanel::fully_observed(panel.players().to_vec(), panel.grid(), values, panel.transform())?;
    Ok((completed, trace))
}

/// Key of chain `stream` under `seed`.
pub fn chain_key(seed: u64, stream: u64) -> SeededRng {
    SeededRng::new(seed, 0).named("mi-chain").substream(stream)
}

/// Runs `config.m` independent chains, chain `c` on stream `c`.
pub fn impute(panel: &CareerPanel, config: &MiConfig) -> Result<ImputationRun> {
    let streams: Vec<u64> = (0..config.m as u64).collect();
    impute_with_streams(panel, config, &streams)
}

/// Like [`impute`], with explicit per-chain stream ids. Chains that share a
/// stream id produce identical imputations.
pub fn impute_with_streams(panel: &CareerPanel, config: &MiConfig, streams: &[u64]) -> Result<ImputationRun> {
    config.validate()?;
    if streams.len() != config.m {
        return Err(Error::InvalidArgument(format!(
            "{} chain streams for m = {}",
            streams.len(),
            config.m
        )));
    }
    check_preconditions(panel)?;
    let model = Model::new(panel)?;

    let chains: Vec<(CareerPanel, Vec<TraceRow>)> = streams
        .par_iter()
        .enumerate()
        .map(|(c, s)| run_chain(&model, panel, &chain_key(config.seed, *s), c, config.n_iter))
        .collect::<Result<_>>()?;

    let mut completed = Vec::with_capacity(config.m);
    let mut traces = Vec::with_capacity(config.m * config.n_iter);
    for (panel, trace) in chains {
        completed.push(panel);
        traces.extend(trace);
    }
    Ok(ImputationRun {
        completed,
        traces,
        config: *config,
        input_mask: panel.mask().to_vec(),
        prior_scale: model.prior_scale,
        warnings: model.warnings,
    })
}
