//! Player-by-age career panels.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::TransformSpec;

/// Inclusive integer age window shared by every player.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeGrid {
    pub min_age: i32,
    pub max_age: i32,
}

impl Default for AgeGrid {
    fn default() -> Self {
        Self {
            min_age: 21,
            max_age: 39,
        }
    }
}

impl AgeGrid {
    pub fn new(min_age: i32, max_age: i32) -> Result<Self> {
        if min_age >= max_age {
            return Err(Error::InvalidArgument(format!(
                "age grid {min_age}..{max_age} is empty"
            )));
        }
        Ok(Self { min_age, max_age })
    }

    pub fn len(&self) -> usize {
        (self.max_age - self.min_age + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn ages(&self) -> impl Iterator<Item = i32> + Clone {
        self.min_age..=self.max_age
    }

    pub fn index_of(&self, age: i32) -> Option<usize> {
        (self.min_age..=self.max_age)
            .contains(&age)
            .then(|| (age - self.min_age) as usize)
    }

    pub fn age_at(&self, index: usize) -> i32 {
        self.min_age + index as i32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerSeason {
    pub player_id: String,
    pub season: i32,
    pub age: i32,
    pub pa: u32,
    pub ops: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellState {
    Observed,
    Missing,
}

/// Rectangular grid of transformed responses. Cells are stored row-major
/// (player, age). Missing cells hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct CareerPanel {
    players: Vec<String>,
    grid: AgeGrid,
    values: Vec<f64>,
    mask: Vec<CellState>,
    transform: TransformSpec,
}

impl CareerPanel {
    pub fn new(
        players: Vec<String>,
        grid: AgeGrid,
        values: Vec<f64>,
        mask: Vec<CellState>,
        transform: TransformSpec,
    ) -> Result<Self> {
        let cells = players.len() * grid.len();
        if values.len() != cells || mask.len() != cells {
            return Err(Error::InvalidArgument(format!(
                "panel of {} players x {} ages needs {cells} cells, got {} values and {} mask entries",
                players.len(),
                grid.len(),
                values.len(),
                mask.len()
            )));
        }
        for (i, (v, m)) in values.iter().zip(&mask).enumerate() {
            if *m == CellState::Observed && !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "observed cell {} of player {}",
                    i % grid.len(),
                    players[i / grid.len()]
                )));
            }
        }
        Ok(Self {
            players,
            grid,
            values,
            mask,
            transform,
        })
    }

    /// Panel with every cell observed.
    pub fn fully_observed(
        players: Vec<String>,
        grid: AgeGrid,
        values: Vec<f64>,
        transform: TransformSpec,
    ) -> Result<Self> {
        let mask = vec![CellState::Observed; values.len()];
        Self::new(players, grid, values, mask, transform)
    }

    pub fn players(&self) -> &[String] {
        &self.players
    }

    pub fn grid(&self) -> AgeGrid {
        self.grid
    }

    pub fn transform(&self) -> TransformSpec {
        self.transform
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn n_ages(&self) -> usize {
        self.grid.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[CellState] {
        &self.mask
    }

    pub fn row(&self, player: usize) -> &[f64] {
        let w = self.n_ages();
        &self.values[player * w..(player + 1) * w]
    }

    pub fn mask_row(&self, player: usize) -> &[CellState] {
        let w = self.n_ages();
        &self.mask[player * w..(player + 1) * w]
    }

    pub fn value(&self, player: usize, age_index: usize) -> f64 {
        self.values[player * self.n_ages() + age_index]
    }

    pub fn state(&self, player: usize, age_index: usize) -> CellState {
        self.mask[player * self.n_ages() + age_index]
    }

    pub fn is_observed(&self, player: usize, age_index: usize) -> bool {
        self.state(player, age_index) == CellState::Observed
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|m| **m == CellState::Observed).count()
    }

    pub fn n_missing(&self) -> usize {
        self.mask.len() - self.n_observed()
    }

    /// Observed cells of one player as `(age_index, value)`.
    pub fn observed_in_row(&self, player: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.row(player)
            .iter()
            .zip(self.mask_row(player))
            .enumerate()
            .filter(|(_, (_, m))| **m == CellState::Observed)
            .map(|(q, (v, _))| (q, *v))
    }

    /// Reorders players; `order[k]` is the old index of the new k-th player.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n_players()];
        for &i in order {
            if i >= seen.len() || seen[i] {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            seen[i] = true;
        }
        if order.len() != self.n_players() {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        let mut values = Vec::with_capacity(self.values.len());
        let mut mask = Vec::with_capacity(self.mask.len());
        for &i in order {
            values.extend_from_slice(self.row(i));
            mask.extend_from_slice(self.mask_row(i));
        }
        let players = order.iter().map(|&i| self.players[i].clone()).collect();
        Self::new(players, self.grid, values, mask, self.transform)
    }

    /// Long-format CSV: `player_id,age,value,observed`. Missing values are written as `NA`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(["player_id", "age", "value", "observed"])?;
        for (p, id) in self.players.iter().enumerate() {
            for (q, age) in self.grid.ages().enumerate() {
                let v = self.value(p, q);
                let observed = self.is_observed(p, q);
                let value = if v.is_finite() { v.to_string() } else { "NA".to_string() };
                w.write_record([id.as_str(), &age.to_string(), &value, if observed { "1" } else { "0" }])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the long-format CSV written by [`CareerPanel::write_csv`]. Player
    /// order follows first appearance; absent cells are missing.
    pub fn read_csv<R: Read>(reader: R, grid: AgeGrid, transform: TransformSpec) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut players: Vec<String> = Vec::new();
        let mut index = std::collections::HashMap::new();
        let mut cells: Vec<(usize, usize, f64, bool)> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::Parse(format!("panel row {}: bad {what}", line + 2));
            let id = rec.get(0).ok_or_else(|| bad("player_id"))?.to_string();
            let age: i32 = rec
                .get(1)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| bad("age"))?;
            let raw = rec.get(2).ok_or_else(|| bad("value"))?.trim();
            let value = if raw == "NA" || raw.is_empty() {
                f64::NAN
            } else {
                raw.parse().map_err(|_| bad("value"))?
            };
            let observed = match rec.get(3).map(str::trim) {
                Some("1") | Some("true") => true,
                Some("0") | Some("false") => false,
                _ => return Err(bad("observed flag")),
            };
            let Some(q) = grid.index_of(age) else {
                continue;
            };
            let p = *index.entry(id.clone()).or_insert_with(|| {
                players.push(id);
                players.len() - 1
            });
            cells.push((p, q, value, observed));
        }
        let w = grid.len();
        let mut values = vec![f64::NAN; players.len() * w];
        let mut mask = vec![CellState::Missing; players.len() * w];
        for (p, q, v, obs) in cells {
            values[p * w + q] = v;
            mask[p * w + q] = if obs { CellState::Observed } else { CellState::Missing };
        }
        Self::new(players, grid, values, mask, transform)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelSummary {
    pub n_players: usize,
    pub n_observed: usize,
    /// Missing fraction per grid age, in grid order.
    pub missing_fraction: Vec<f64>,
}

pub fn panel_summary(panel: &CareerPanel) -> PanelSummary {
    let n = panel.n_players();
    let missing_fraction = (0..panel.n_ages())
        .map(|q| {
            if n == 0 {
                return 0.0;
            }
            let missing = (0..n).filter(|&p| !panel.is_observed(p, q)).count();
            missing as f64 / n as f64
        })
        .collect();
    PanelSummary {
        n_players: n,
        n_observed: panel.n_observed(),
        missing_fraction,
    }
}
