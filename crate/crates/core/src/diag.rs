//! Imputation diagnostics: kernel densities of observed vs imputed values,
//! a two-sample KS distance, and per-chain trace statistics with a scalar
//! mixing score.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mi::{ImputationRun, TraceRow};

pub const DEFAULT_KDE_POINTS: usize = 512;
/// Trailing iterations used by the mixing score.
pub const MIXING_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityEstimate {
    pub fn trapezoid_integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Linear-interpolation quantile of sorted data (R type 7).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule of thumb, `0.9 min(sd, IQR / 1.34) n^(-1/5)`. Falls back
/// to the sd when the IQR is zero.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::Precondition("bandwidth needs >= 2 values".into()));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Err(Error::Precondition("all values identical; bandwidth is zero".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sd = sample_sd(values);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = match iqr / 1.34 {
        s if s > 0.0 => sd.min(s),
        _ => sd,
    };
    if spread.is_nan() || spread <= 0.0 {
        return Err(Error::Precondition("all values identical; bandwidth is zero".into()));
    }
    Ok(0.9 * spread * (values.len() as f64).powf(-0.2))
}

/// Gaussian kernel density. Without a grid, 512 points spanning the data
/// range padded by three bandwidths.
pub fn kde(values: &[f64], grid: Option<&[f64]>) -> Result<DensityEstimate> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kde input".into()));
    }
    let h = silverman_bandwidth(values)?;
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
            let step = (hi - lo) / (DEFAULT_KDE_POINTS - 1) as f64;
            (0..DEFAULT_KDE_POINTS).map(|i| lo + step * i as f64).collect()
        }
    };
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * PI).sqrt());
    let density = grid
        .iter()
        .map(|x| {
            values
                .iter()
                .map(|v| {
                    let u = (x - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(DensityEstimate {
        grid,
        density,
        bandwidth: h,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Precondition("KS distance needs two nonempty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTable {
    pub rows: Vec<TraceRow>,
    pub mixing_mean: f64,
    pub mixing_sd: f64,
}

impl TraceTable {
    pub fn summary_text(&self) -> String {
        format!(
            "window = {}\nmixing_mean = {}\nmixing_sd = {}\n",
            MIXING_WINDOW, self.mixing_mean, self.mixing_sd
        )
    }
}

/// Share of the variance of the last `MIXING_WINDOW` iterations that lies
/// between chains (population moments, so the score is in [0, 1]).
pub fn mixing_score(rows: &[TraceRow], stat: impl Fn(&TraceRow) -> f64) -> f64 {
    let n_chains = rows.iter().map(|r| r.chain).max().unwrap_or(0);
    let n_iter = rows.iter().map(|r| r.iteration).max().unwrap_or(0);
    let first = n_iter.saturating_sub(MIXING_WINDOW) + 1;
    let by_chain: Vec<Vec<f64>> = (1..=n_chains)
        .map(|c| {
            rows.iter()
                .filter(|r| r.chain == c && r.iteration >= first)
                .map(&stat)
                .collect()
        })
        .filter(|v: &Vec<f64>| !v.is_empty())
        .collect();
    if by_chain.is_empty() {
        return 0.0;
    }
    // deviations from the first chain's mean, so identical chains score exactly 0
    let chain_mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let shift = chain_mean(&by_chain[0]);
    let n_all = by_chain.iter().map(Vec::len).sum::<usize>() as f64;
    let dev: Vec<f64> = by_chain.iter().map(|v| chain_mean(v) - shift).collect();
    let grand = by_chain.iter().zip(&dev).map(|(v, d)| v.len() as f64 * d).sum::<f64>() / n_all;
    let total = by_chain
        .iter()
        .flatten()
        .map(|v| (v - shift - grand) * (v - shift - grand))
        .sum::<f64>()
        / n_all;
    if total.is_nan() || total <= 0.0 {
        return 0.0;
    }
    let between = by_chain
        .iter()
        .zip(&dev)
        .map(|(v, d)| v.len() as f64 * (d - grand) * (d - grand))
        .sum::<f64>()
        / n_all;
    (between / total).clamp(0.0, 1.0)
}

pub fn trace_stats(run: &ImputationRun) -> TraceTable {
    TraceTable {
        rows: run.traces.clone(),
        mixing_mean: mixing_score(&run.traces, |r| r.imputed_mean),
        mixing_sd: mixing_score(&run.traces, |r| r.imputed_sd),
    }
}

/// `x,density,source` rows for several labelled densities.
pub fn write_kde_csv<W: std::io::Write>(writer: W, series: &[(String, DensityEstimate)]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(["x", "density", "source"])?;
    for (label, est) in series {
        for (x, d) in est.grid.iter().zip(&est.density) {
            w.write_record([x.to_string(), d.to_string(), label.clone()])?;
        }
    }
    w.flush()?;
    Ok(())
}
