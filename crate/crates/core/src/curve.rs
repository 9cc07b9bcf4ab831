//! Loess aging curves and curve comparison.
//!
//! `fit_loess` is a direct (non-interpolating) local polynomial smoother:
//! at each evaluation point it takes the `ceil(span * n)` nearest data
//! points, weights them with the tricube kernel scaled to the distance of
//! the farthest of those points, and solves weighted least squares. The fit
//! is linear in `y`, so every fitted value comes with its hat vector, and
//! pointwise standard errors follow from `sigma^2 * |l(x)|^2`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{AgeGrid, CareerPanel};
use crate::transform::{inverse_transform_ops, TransformSpec};

const RCOND_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Transformed,
    Ops,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgingCurve {
    pub grid: AgeGrid,
    pub mean: Vec<f64>,
    pub se: Option<Vec<f64>>,
    pub units: Units,
}

impl AgingCurve {
    /// The same curve in OPS units; standard errors use the delta method.
    pub fn to_ops(&self, spec: &TransformSpec) -> Result<AgingCurve> {
        if self.units == Units::Ops {
            return Ok(self.clone());
        }
        let clamp = |y: f64| y.clamp(0.0, std::f64::consts::FRAC_PI_2);
        let mean = self
            .mean
            .iter()
            .map(|y| inverse_transform_ops(clamp(*y), spec))
            .collect::<Result<Vec<_>>>()?;
        let se = self.se.as_ref().map(|se| {
            se.iter()
                .zip(&self.mean)
                .map(|(s, y)| s * spec.ops_slope(*y).abs())
                .collect()
        });
        Ok(AgingCurve {
            grid: self.grid,
            mean,
            se,
            units: Units::Ops,
        })
    }

    /// Age with the highest mean (first one on ties).
    pub fn peak_age(&self) -> i32 {
        let (q, _) = self.mean.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc },
        );
        self.grid.age_at(q)
    }

    /// `age,estimate[,se]`
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        if self.se.is_some() {
            w.write_record(["age", "estimate", "se"])?;
        } else {
            w.write_record(["age", "estimate"])?;
        }
        for (q, age) in self.grid.ages().enumerate() {
            let mut rec = vec![age.to_string(), self.mean[q].to_string()];
            if let Some(se) = &self.se {
                rec.push(se[q].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoessSpec {
    pub span: f64,
    pub degree: usize,
}

impl Default for LoessSpec {
    fn default() -> Self {
        Self { span: 0.75, degree: 2 }
    }
}

impl LoessSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.span > 0.0 && self.span <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "loess span {} not in (0, 1]",
                self.span
            )));
        }
        if !(1..=2).contains(&self.degree) {
            return Err(Error::InvalidArgument(format!(
                "loess degree {} not in {{1, 2}}",
                self.degree
            )));
        }
        Ok(())
    }

    /// Neighborhood size for `n` points.
    pub fn window(&self, n: usize) -> usize {
        ((self.span * n as f64).ceil() as usize).min(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoessFit {
    pub fitted: Vec<f64>,
    pub se: Vec<f64>,
    pub residual_variance: f64,
    pub warnings: Vec<String>,
}

pub fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u * u;
        t * t * t
    }
}

/// Hat vector of the local fit at `x0`: the fitted value is `l . y`.
fn hat_vector(xs: &[f64], x0: f64, q: usize, degree: usize, warnings: &mut Vec<String>) -> Result<Vec<f64>> {
    let mut dist: Vec<f64> = xs.iter().map(|x| (x - x0).abs()).collect();
    let d_max = {
        let (_, kth, _) = dist.select_nth_unstable_by(q - 1, f64::total_cmp);
        *kth
    };
    dist.clear();

    let weights: Vec<f64> = xs
        .iter()
        .map(|x| {
            let d = (x - x0).abs();
            if d_max > 0.0 {
                tricube(d / d_max)
            } else if d == 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let h = if d_max > 0.0 { d_max } else { 1.0 };

    let mut deg = degree;
    loop {
        let k = deg + 1;
        let mut m = DMatrix::<f64>::zeros(k, k);
        let mut basis = vec![0.0; k];
        for (x, w) in xs.iter().zip(&weights) {
            if *w == 0.0 {
                continue;
            }
            let u = (x - x0) / h;
            basis[0] = 1.0;
            for j in 1..k {
                basis[j] = basis[j - 1] * u;
            }
            for a in 0..k {
                for b in 0..k {
                    m[(a, b)] += w * basis[a] * basis[b];
                }
            }
        }
        let eig = SymmetricEigen::new(m.clone());
        let max_ev = eig.eigenvalues.max();
        let min_ev = eig.eigenvalues.min();
        if max_ev > 0.0 && min_ev > RCOND_MIN * max_ev {
            let mut e1 = DVector::<f64>::zeros(k);
            e1[0] = 1.0;
            let g = m
                .cholesky()
                .map(|c| c.solve(&e1))
                .ok_or_else(|| Error::Singular(format!("local fit at {x0}")))?;
            return Ok(xs
                .iter()
                .zip(&weights)
                .map(|(x, w)| {
                    if *w == 0.0 {
                        return 0.0;
                    }
                    let u = (x - x0) / h;
                    let mut p = 1.0;
                    let mut acc = 0.0;
                    for j in 0..k {
                        acc += g[j] * p;
                        p *= u;
                    }
                    w * acc
                })
                .collect());
        }
        if deg == 0 {
            return Err(Error::Singular(format!("local fit at {x0} has no weighted points")));
        }
        warnings.push(format!("local fit at {x0} is singular; degree reduced to {}", deg - 1));
        deg -= 1;
    }
}

/// Local polynomial regression of `points` evaluated at `eval_grid`.
pub fn fit_loess(points: &[(f64, f64)], spec: &LoessSpec, eval_grid: &[f64]) -> Result<LoessFit> {
    spec.validate()?;
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("loess input".into()));
    }
    let n = points.len();
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < spec.degree + 2 {
        return Err(Error::Precondition(format!(
            "loess of degree {} needs >= {} distinct x values, got {}",
            spec.degree,
            spec.degree + 2,
            distinct.len()
        )));
    }
    let q = spec.window(n);
    if q < spec.degree + 1 {
        return Err(Error::InvalidArgument(format!(
            "span {} keeps {q} of {n} points, fewer than degree + 1",
            spec.span
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mut warnings = Vec::new();

    // Residual variance: RSS / (n - 2 tr L + tr L'L). Rows of L are shared by
    // points with equal x, so fitted values and row norms are cached per distinct x.
    struct HatRow {
        l: Vec<f64>,
        fit: f64,
        norm2: f64,
    }
    let mut rows: BTreeMap<u64, HatRow> = BTreeMap::new();
    for &x in &distinct {
        let l = hat_vector(&xs, x, q, spec.degree, &mut warnings)?;
        let fit = l.iter().zip(&ys).map(|(a, b)| a * b).sum();
        let norm2 = l.iter().map(|v| v * v).sum();
        rows.insert(x.to_bits(), HatRow { l, fit, norm2 });
    }
    let mut rss = 0.0;
    let mut tr = 0.0;
    let mut tr2 = 0.0;
    for (i, (x, y)) in points.iter().enumerate() {
        let row = &rows[&x.to_bits()];
        rss += (y - row.fit) * (y - row.fit);
        tr += row.l[i];
        tr2 += row.norm2;
    }
    let delta = n as f64 - 2.0 * tr + tr2;
    let residual_variance = if delta > 0.0 { rss / delta } else { 0.0 };

    let mut fitted = Vec::with_capacity(eval_grid.len());
    let mut se = Vec::with_capacity(eval_grid.len());
    for &x0 in eval_grid {
        if let Some(row) = rows.get(&x0.to_bits()) {
            fitted.push(row.fit);
            se.push((residual_variance * row.norm2).sqrt());
            continue;
        }
        let l = hat_vector(&xs, x0, q, spec.degree, &mut warnings)?;
        fitted.push(l.iter().zip(&ys).map(|(a, b)| a * b).sum());
        se.push((residual_variance * l.iter().map(|v| v * v).sum::<f64>()).sqrt());
    }
    warnings.dedup();
    Ok(LoessFit {
        fitted,
        se,
        residual_variance,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellUse {
    ObservedOnly,
    All,
}

/// Pools every eligible `(age, value)` cell across players and smooths them
/// on the integer age grid. Both end ages of the grid need at least one cell.
pub fn panel_to_curve(panel: &CareerPanel, spec: &LoessSpec, cells: CellUse) -> Result<AgingCurve> {
    let grid = panel.grid();
    let mut points = Vec::with_capacity(panel.values().len());
    let mut per_age = vec![0usize; grid.len()];
    for p in 0..panel.n_players() {
        for (q, age) in grid.ages().enumerate() {
            let use_cell = match cells {
                CellUse::ObservedOnly => panel.is_observed(p, q),
                CellUse::All => true,
            };
            if !use_cell {
                continue;
            }
            let v = panel.value(p, q);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "cell of player {} at age {age}",
                    panel.players()[p]
                )));
            }
            points.push((f64::from(age), v));
            per_age[q] += 1;
        }
    }
    // the smoother cannot extrapolate past an empty end of the grid; interior gaps are bridged
    for q in [0, grid.len() - 1] {
        if per_age[q] == 0 {
            return Err(Error::EmptyAge { age: grid.age_at(q) });
        }
    }
    for (q, _) in per_age.iter().enumerate().filter(|(_, c)| **c == 0) {
        log::warn!("no cells at age {}; curve interpolated there", grid.age_at(q));
    }
    let eval: Vec<f64> = grid.ages().map(f64::from).collect();
    let fit = fit_loess(&points, spec, &eval)?;
    for w in &fit.warnings {
        log::warn!("{w}");
    }
    Ok(AgingCurve {
        grid,
        mean: fit.fitted,
        se: Some(fit.se),
        units: Units::Transformed,
    })
}

/// Mean absolute difference over the grid ages.
pub fn curve_mae(a: &AgingCurve, b: &AgingCurve) -> Result<f64> {
    if a.grid != b.grid || a.units != b.units || a.mean.len() != b.mean.len() {
        return Err(Error::Mismatch("curves differ in grid or units".into()));
    }
    let total: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / a.mean.len() as f64)
}
