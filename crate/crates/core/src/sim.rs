//! Synthetic careers from a fitted mixed model, and the three dropout
//! mechanisms applied to them.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmm::LmmFit;
use crate::panel::{AgeGrid, CareerPanel, CellState};
pub use crate::rng::SeededRng;
use crate::transform::{inverse_transform_ops, TransformSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DropoutMechanism {
    /// Trailing four-season OPS average below the threshold ends the career.
    #[serde(rename = "rolling4")]
    Rolling4,
    /// OPS average over the early window below the threshold ends the career after it.
    #[serde(rename = "early")]
    EarlyCareer,
    /// Each player retires at `retire_age` with probability `retire_prob`.
    #[serde(rename = "random30")]
    RandomAt30,
}

impl fmt::Display for DropoutMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rolling4 => "rolling4",
            Self::EarlyCareer => "early",
            Self::RandomAt30 => "random30",
        })
    }
}

impl FromStr for DropoutMechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rolling4" => Ok(Self::Rolling4),
            "early" => Ok(Self::EarlyCareer),
            "random30" => Ok(Self::RandomAt30),
            other => Err(Error::InvalidArgument(format!("unknown dropout mechanism {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub mechanism: DropoutMechanism,
    /// OPS units.
    pub threshold: f64,
    pub retire_prob: f64,
    pub retire_age: i32,
    /// Last age of the early-career window (window starts at the grid minimum).
    pub early_last_age: i32,
    pub window: usize,
}

impl DropoutSpec {
    pub fn new(mechanism: DropoutMechanism) -> Self {
        Self {
            mechanism,
            threshold: 0.55,
            retire_prob: 0.25,
            retire_age: 30,
            early_last_age: 25,
            window: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(Error::InvalidArgument(format!("threshold {}", self.threshold)));
        }
        if !(0.0..=1.0).contains(&self.retire_prob) {
            return Err(Error::InvalidArgument(format!("retire_prob {}", self.retire_prob)));
        }
        if self.window == 0 {
            return Err(Error::InvalidArgument("rolling window must be positive".into()));
        }
        Ok(())
    }
}

impl Default for DropoutSpec {
    fn default() -> Self {
        Self::new(DropoutMechanism::EarlyCareer)
    }
}

/// Draws `n_players` full careers: intercept `b ~ N(0, tau2)` per player and
/// `e ~ N(0, sigma2)` per cell, clamped to the transform range. Player `i`
/// uses substream `i` of `rng`.
pub fn simulate_careers(fit: &LmmFit, n_players: usize, grid: AgeGrid, rng: &SeededRng) -> Result<CareerPanel> {
    if !fit.converged {
        return Err(Error::Precondition("cannot simulate from a non-converged fit".into()));
    }
    if n_players == 0 {
        return Err(Error::Precondition("n_players must be >= 1".into()));
    }
    let tau = fit.tau2.max(0.0).sqrt();
    let sigma = fit.sigma2.max(0.0).sqrt();
    let curve: Vec<f64> = grid.ages().map(|a| fit.mean_at(f64::from(a))).collect();
    let width = (n_players.max(2) - 1).to_string().len().max(4);

    let mut players = Vec::with_capacity(n_players);
    let mut values = Vec::with_capacity(n_players * grid.len());
    for p in 0..n_players {
        let mut r = rng.substream(p as u64).rng();
        let z: f64 = StandardNormal.sample(&mut r);
        let b = tau * z;
        for mu in &curve {
            let e: f64 = StandardNormal.sample(&mut r);
            values.push((mu + b + sigma * e).clamp(0.0, FRAC_PI_2));
        }
        players.push(format!("sim{p:0width$}"));
    }
    CareerPanel::fully_observed(players, grid, values, Default::default())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Index of the first age that becomes missing for one career, if any.
fn dropout_start(ops: &[f64], grid: AgeGrid, spec: &DropoutSpec, draw: f64) -> Option<usize> {
    match spec.mechanism {
        DropoutMechanism::Rolling4 => {
            let w = spec.window;
            (w - 1..ops.len())
                .find(|&q| mean(&ops[q + 1 - w..=q]) < spec.threshold)
                .map(|q| q + 1)
                .filter(|&q| q < ops.len())
        }
        DropoutMechanism::EarlyCareer => {
            let last = grid.index_of(spec.early_last_age)?;
            (mean(&ops[..=last]) < spec.threshold)
                .then_some(last + 1)
                .filter(|&q| q < ops.len())
        }
        DropoutMechanism::RandomAt30 => {
            let start = grid.index_of(spec.retire_age)?;
            (draw < spec.retire_prob).then_some(start)
        }
    }
}

/// Masks the tail of each career according to `spec`. Thresholds are
/// compared on the OPS scale; a player at exactly the threshold survives.
/// Observed values are copied unchanged and masked cells are set to NaN.
pub fn apply_dropout(
    panel: &CareerPanel,
    spec: &DropoutSpec,
    tspec: &TransformSpec,
    rng: &SeededRng,
) -> Result<CareerPanel> {
    spec.validate()?;
    tspec.validate()?;
    if panel.n_missing() > 0 {
        return Err(Error::Precondition("dropout requires a fully observed panel".into()));
    }
    let grid = panel.grid();
    let w = grid.len();
    let mut values = panel.values().to_vec();
    let mut mask = panel.mask().to_vec();
    for p in 0..panel.n_players() {
        let ops = panel
            .row(p)
            .iter()
            .map(|y| inverse_transform_ops(*y, tspec))
            .collect::<Result<Vec<_>>>()?;
        let draw = match spec.mechanism {
            DropoutMechanism::RandomAt30 => rng.substream(p as u64).rng().random::<f64>(),
            _ => 0.0,
        };
        if let Some(start) = dropout_start(&ops, grid, spec, draw) {
            for q in start..w {
                values[p * w + q] = f64::NAN;
                mask[p * w + q] = CellState::Missing;
            }
        }
    }
    CareerPanel::new(panel.players().to_vec(), grid, values, mask, panel.transform())
}
