//! Lahman `Batting` / `People` ingestion.
//!
//! Seasons are aggregated over stints, OPS is computed from the counting
//! stats, ages follow the June-30 convention, and the result is a
//! [`CareerPanel`] in transformed units.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{AgeGrid, CareerPanel, CellState, PlayerSeason};
use crate::transform::{transform_ops, TransformSpec};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BattingRow {
    pub player_id: String,
    pub season: i32,
    pub ab: u32,
    pub h: u32,
    pub doubles: u32,
    pub triples: u32,
    pub hr: u32,
    pub bb: u32,
    pub hbp: u32,
    pub sf: u32,
    pub sh: u32,
}

impl BattingRow {
    /// AB + BB + HBP + SF + SH. Catcher's interference is not in the table.
    pub fn plate_appearances(&self) -> u32 {
        self.ab + self.bb + self.hbp + self.sf + self.sh
    }

    fn accumulate(&mut self, other: &BattingRow) {
        self.ab += other.ab;
        self.h += other.h;
        self.doubles += other.doubles;
        self.triples += other.triples;
        self.hr += other.hr;
        self.bb += other.bb;
        self.hbp += other.hbp;
        self.sf += other.sf;
        self.sh += other.sh;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonRow {
    pub player_id: String,
    pub birth_year: Option<i32>,
    pub birth_month: Option<u32>,
    pub debut_year: Option<i32>,
}

/// On-base plus slugging. `None` when AB or the OBP denominator is zero.
pub fn compute_ops(row: &BattingRow) -> Option<f64> {
    let obp_den = row.ab + row.bb + row.hbp + row.sf;
    if row.ab == 0 || obp_den == 0 {
        return None;
    }
    let obp = f64::from(row.h + row.bb + row.hbp) / f64::from(obp_den);
    let singles = row.h.saturating_sub(row.doubles + row.triples + row.hr);
    let total_bases = singles + 2 * row.doubles + 3 * row.triples + 4 * row.hr;
    let slg = f64::from(total_bases) / f64::from(row.ab);
    Some(obp + slg)
}

/// Age on June 30 of `season`.
pub fn adjusted_age(person: &PersonRow, season: i32) -> Result<i32> {
    let (Some(year), Some(month)) = (person.birth_year, person.birth_month) else {
        return Err(Error::Precondition(format!(
            "player {} has no birth date",
            person.player_id
        )));
    };
    if !(1..=12).contains(&month) {
        return Err(Error::InvalidArgument(format!(
            "player {} birth month {month}",
            person.player_id
        )));
    }
    if season < year {
        return Err(Error::Precondition(format!(
            "season {season} precedes birth year {year} for {}",
            person.player_id
        )));
    }
    Ok(if month <= 6 { season - year } else { season - year - 1 })
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn count_field(rec: &csv::StringRecord, idx: Option<usize>) -> std::result::Result<u32, String> {
    let Some(i) = idx else { return Ok(0) };
    let raw = rec.get(i).unwrap_or("").trim();
    if raw.is_empty() || raw == "NA" {
        return Ok(0);
    }
    raw.parse::<u32>()
        .or_else(|_| raw.parse::<f64>().map(|f| f as u32).map_err(|_| ()))
        .map_err(|_| format!("bad count {raw:?}"))
}

fn opt_int<T: std::str::FromStr>(rec: &csv::StringRecord, idx: Option<usize>) -> Option<T> {
    let raw = rec.get(idx?)?.trim();
    if raw.is_empty() || raw == "NA" {
        return None;
    }
    raw.parse().ok()
}

/// Parses a Lahman Batting CSV. Extra columns are ignored; missing HBP, SF
/// and SH fields read as zero. Malformed rows are logged and skipped.
pub fn read_batting<R: Read>(reader: R) -> Result<Vec<BattingRow>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id = column(&headers, "playerID").ok_or_else(|| Error::Parse("Batting: no playerID column".into()))?;
    let year = column(&headers, "yearID").ok_or_else(|| Error::Parse("Batting: no yearID column".into()))?;
    let idx = |n| column(&headers, n);
    let (ab, h, d, t, hr, bb, hbp, sf, sh) = (
        idx("AB"),
        idx("H"),
        idx("2B"),
        idx("3B"),
        idx("HR"),
        idx("BB"),
        idx("HBP"),
        idx("SF"),
        idx("SH"),
    );
    if ab.is_none() || h.is_none() {
        return Err(Error::Parse("Batting: AB and H columns are required".into()));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                warn!("Batting line {}: {e}; skipped", line + 2);
                continue;
            }
        };
        let parsed = (|| -> std::result::Result<BattingRow, String> {
            let player_id = rec
                .get(id)
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or("empty playerID")?;
            let season = opt_int::<i32>(&rec, Some(year)).ok_or("bad yearID")?;
            let row = BattingRow {
                player_id: player_id.to_string(),
                season,
                ab: count_field(&rec, ab)?,
                h: count_field(&rec, h)?,
                doubles: count_field(&rec, d)?,
                triples: count_field(&rec, t)?,
                hr: count_field(&rec, hr)?,
                bb: count_field(&rec, bb)?,
                hbp: count_field(&rec, hbp)?,
                sf: count_field(&rec, sf)?,
                sh: count_field(&rec, sh)?,
            };
            if row.h < row.doubles + row.triples + row.hr {
                return Err("extra-base hits exceed hits".into());
            }
            Ok(row)
        })();
        match parsed {
            Ok(r) => rows.push(r),
            Err(e) => warn!("Batting line {}: {e}; skipped", line + 2),
        }
    }
    Ok(rows)
}

/// Parses a Lahman People CSV. `debut` may be a full date; only its year is kept.
pub fn read_people<R: Read>(reader: R) -> Result<Vec<PersonRow>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id = column(&headers, "playerID").ok_or_else(|| Error::Parse("People: no playerID column".into()))?;
    let by = column(&headers, "birthYear");
    let bm = column(&headers, "birthMonth");
    let debut = column(&headers, "debut");
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                warn!("People line {}: {e}; skipped", line + 2);
                continue;
            }
        };
        let Some(player_id) = rec.get(id).map(str::trim).filter(|s| !s.is_empty()) else {
            warn!("People line {}: empty playerID; skipped", line + 2);
            continue;
        };
        let debut_year = debut
            .and_then(|i| rec.get(i))
            .map(str::trim)
            .and_then(|s| s.get(..4))
            .and_then(|s| s.parse().ok());
        rows.push(PersonRow {
            player_id: player_id.to_string(),
            birth_year: opt_int(&rec, by),
            birth_month: opt_int(&rec, bm),
            debut_year,
        });
    }
    Ok(rows)
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn load_batting(path: &Path) -> Result<Vec<BattingRow>> {
    read_batting(open(path)?)
}

pub fn load_people(path: &Path) -> Result<Vec<PersonRow>> {
    read_people(open(path)?)
}

/// Stint-aggregated player-seasons with age, PA and OPS, restricted to
/// players who debuted in or after `min_debut`. Seasons without a computable
/// OPS are dropped.
pub fn player_seasons(batting: &[BattingRow], people: &[PersonRow], min_debut: i32) -> Vec<PlayerSeason> {
    let people: HashMap<&str, &PersonRow> = people.iter().map(|p| (p.player_id.as_str(), p)).collect();

    let mut seasons: BTreeMap<(&str, i32), BattingRow> = BTreeMap::new();
    for row in batting {
        seasons
            .entry((row.player_id.as_str(), row.season))
            .and_modify(|acc| acc.accumulate(row))
            .or_insert_with(|| row.clone());
    }

    let mut out = Vec::new();
    for ((id, season), row) in seasons {
        let Some(person) = people.get(id) else {
            debug!("{id}: not in People; skipped");
            continue;
        };
        match person.debut_year {
            Some(y) if y >= min_debut => {}
            Some(_) => continue,
            None => {
                debug!("{id}: no debut date; skipped");
                continue;
            }
        }
        let age = match adjusted_age(person, season) {
            Ok(a) => a,
            Err(e) => {
                debug!("{id} {season}: {e}; skipped");
                continue;
            }
        };
        let pa = row.plate_appearances();
        let Some(ops) = compute_ops(&row) else {
            debug!("{id} {season}: zero OPS denominator; skipped");
            continue;
        };
        out.push(PlayerSeason {
            player_id: id.to_string(),
            season,
            age,
            pa,
            ops,
        });
    }
    out
}

/// Joins, filters and pivots the Lahman tables into a panel. A cell is
/// observed iff the player has a season at that age with `PA >= min_pa`.
/// Players are sorted by id; players with no observed cell are dropped.
pub fn build_panel(
    batting: &[BattingRow],
    people: &[PersonRow],
    grid: AgeGrid,
    min_pa: u32,
    min_debut: i32,
    spec: TransformSpec,
) -> Result<CareerPanel> {
    spec.validate()?;
    let seasons = player_seasons(batting, people, min_debut);
    let mut by_player: BTreeMap<&str, Vec<&PlayerSeason>> = BTreeMap::new();
    for s in &seasons {
        if s.pa >= min_pa && grid.index_of(s.age).is_some() {
            by_player.entry(s.player_id.as_str()).or_default().push(s);
        }
    }
    let w = grid.len();
    let mut players = Vec::with_capacity(by_player.len());
    let mut values = Vec::with_capacity(by_player.len() * w);
    let mut mask = Vec::with_capacity(by_player.len() * w);
    for (id, list) in by_player {
        let mut row = vec![f64::NAN; w];
        let mut row_mask = vec![CellState::Missing; w];
        for s in list {
            let q = grid.index_of(s.age).expect("filtered above");
            row[q] = transform_ops(s.ops, &spec)?;
            row_mask[q] = CellState::Observed;
        }
        players.push(id.to_string());
        values.extend(row);
        mask.extend(row_mask);
    }
    if players.is_empty() {
        return Err(Error::EmptyPanel);
    }
    info!("ingested {} players", players.len());
    CareerPanel::new(players, grid, values, mask, spec)
}
