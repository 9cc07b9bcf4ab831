//! Rubin's combining rules.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::curve::{AgingCurve, Units};
use crate::error::{Error, Result};
use crate::panel::AgeGrid;
use crate::transform::{inverse_transform_ops, TransformSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub q_bar: f64,
    pub u_bar: f64,
    pub b: f64,
    pub t_var: f64,
    /// Relative increase in variance due to nonresponse.
    pub r: f64,
    /// Degrees of freedom; `+inf` when `b == 0`.
    pub nu: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

/// Two-sided critical value `t_{nu, 1 - alpha/2}`; normal when `nu` is infinite.
pub fn critical_value(nu: f64, level: f64) -> f64 {
    let p = 1.0 - (1.0 - level) / 2.0;
    // beyond ~1e7 degrees of freedom t and normal quantiles agree to 1e-7
    if nu > 1e7 {
        Normal::standard().inverse_cdf(p)
    } else {
        StudentsT::new(0.0, 1.0, nu)
            .expect("positive degrees of freedom")
            .inverse_cdf(p)
    }
}

pub fn rubin_pool(q_hats: &[f64], u_hats: &[f64], level: f64) -> Result<PooledEstimate> {
    let m = q_hats.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("Rubin's rules need m >= 2, got {m}")));
    }
    if u_hats.len() != m {
        return Err(Error::InvalidArgument(format!(
            "{m} estimates but {} variances",
            u_hats.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level {level}")));
    }
    if q_hats.iter().chain(u_hats).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pooling input".into()));
    }
    if u_hats.iter().any(|u| *u < 0.0) {
        return Err(Error::InvalidArgument("negative within-imputation variance".into()));
    }

    let mf = m as f64;
    // centered on the first estimate so identical inputs pool exactly
    let q_bar = q_hats[0] + q_hats.iter().map(|q| q - q_hats[0]).sum::<f64>() / mf;
    let u_bar = u_hats[0] + u_hats.iter().map(|u| u - u_hats[0]).sum::<f64>() / mf;
    let b = q_hats.iter().map(|q| (q - q_bar) * (q - q_bar)).sum::<f64>() / (mf - 1.0);
    let inflation = 1.0 + 1.0 / mf;
    let t_var = u_bar + inflation * b;

    let (r, nu) = if b == 0.0 {
        (0.0, f64::INFINITY)
    } else if u_bar == 0.0 {
        (f64::INFINITY, mf - 1.0)
    } else {
        let r = inflation * b / u_bar;
        let k = 1.0 + 1.0 / r;
        (r, (mf - 1.0) * k * k)
    };

    let half = critical_value(nu, level) * t_var.sqrt();
    Ok(PooledEstimate {
        q_bar,
        u_bar,
        b,
        t_var,
        r,
        nu,
        ci_low: q_bar - half,
        ci_high: q_bar + half,
        level,
    })
}

/// Pointwise pooled curve.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledCurve {
    pub grid: AgeGrid,
    pub units: Units,
    pub estimates: Vec<PooledEstimate>,
}

impl PooledCurve {
    /// Pooled mean with `se = sqrt(T)`.
    pub fn to_curve(&self) -> AgingCurve {
        AgingCurve {
            grid: self.grid,
            mean: self.estimates.iter().map(|e| e.q_bar).collect(),
            se: Some(self.estimates.iter().map(|e| e.t_var.sqrt()).collect()),
            units: self.units,
        }
    }

    /// `age,estimate,se,ci_low,ci_high`. In OPS units the interval endpoints
    /// are mapped through the inverse transform and the standard error uses
    /// the delta method.
    pub fn write_csv<W: std::io::Write>(&self, writer: W, ops: Option<&TransformSpec>) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["age", "estimate", "se", "ci_low", "ci_high"])?;
        let to_ops = |y: f64, t: &TransformSpec| inverse_transform_ops(y.clamp(0.0, std::f64::consts::FRAC_PI_2), t);
        for (age, e) in self.grid.ages().zip(&self.estimates) {
            let se = e.t_var.sqrt();
            let row = match ops {
                Some(t) if self.units == Units::Transformed => [
                    to_ops(e.q_bar, t)?,
                    t.ops_slope(e.q_bar).abs() * se,
                    to_ops(e.ci_low, t)?,
                    to_ops(e.ci_high, t)?,
                ],
                _ => [e.q_bar, se, e.ci_low, e.ci_high],
            };
            let mut rec = vec![age.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Applies [`rubin_pool`] at every age: `Q_i` is curve `i`'s mean, `U_i`
/// its squared pointwise standard error.
pub fn pool_curve(curves: &[AgingCurve], level: f64) -> Result<PooledCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidArgument("no curves to pool".into()))?;
    for c in curves {
        if c.grid != first.grid || c.units != first.units {
            return Err(Error::Mismatch("curves to pool differ in grid or units".into()));
        }
        if c.se.is_none() {
            return Err(Error::InvalidArgument("pooling needs pointwise standard errors".into()));
        }
    }
    let estimates = (0..first.grid.len())
        .map(|q| {
            let qs: Vec<f64> = curves.iter().map(|c| c.mean[q]).collect();
            let us: Vec<f64> = curves
                .iter()
                .map(|c| {
                    let se = c.se.as_ref().expect("checked")[q];
                    se * se
                })
                .collect();
            rubin_pool(&qs, &us, level)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PooledCurve {
        grid: first.grid,
        units: first.units,
        estimates,
    })
}
