//! Run configuration: a TOML file, overridden field by field by flags.

use std::path::{Path, PathBuf};

use aging_core::{AgeGrid, DropoutMechanism, DropoutSpec, LoessSpec, MiConfig, TransformSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Fit,
    Simulate,
    Impute,
    Curve,
    #[default]
    PipelineSim,
    PipelineMlb,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fit => "fit",
            Self::Simulate => "simulate",
            Self::Impute => "impute",
            Self::Curve => "curve",
            Self::PipelineSim => "pipeline-sim",
            Self::PipelineMlb => "pipeline-mlb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub age_min: i32,
    pub age_max: i32,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = AgeGrid::default();
        Self {
            age_min: g.min_age,
            age_max: g.max_age,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformSection {
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for TransformSection {
    fn default() -> Self {
        let t = TransformSpec::default();
        Self {
            scale_min: t.scale_min,
            scale_max: t.scale_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub min_pa: u32,
    pub min_debut: i32,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            min_pa: 100,
            min_debut: 1985,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutSection {
    pub mechanism: DropoutMechanism,
    pub threshold: f64,
    pub retire_prob: f64,
    pub retire_age: i32,
    pub early_last_age: i32,
    pub window: usize,
}

impl Default for DropoutSection {
    fn default() -> Self {
        let d = DropoutSpec::default();
        Self {
            mechanism: d.mechanism,
            threshold: d.threshold,
            retire_prob: d.retire_prob,
            retire_age: d.retire_age,
            early_last_age: d.early_last_age,
            window: d.window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiSection {
    pub m: usize,
    pub iters: usize,
}

impl Default for MiSection {
    fn default() -> Self {
        let c = MiConfig::default();
        Self {
            m: c.m,
            iters: c.n_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoessSection {
    pub span: f64,
    pub degree: usize,
}

impl Default for LoessSection {
    fn default() -> Self {
        let l = LoessSpec::default();
        Self {
            span: l.span,
            degree: l.degree,
        }
    }
}

/// Everything a run needs. Serialized verbatim as the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub command: Command,
    pub out: PathBuf,
    /// Root seed; every random stream is a named child of it.
    pub seed: u64,
    /// Worker threads for imputation chains; 0 lets rayon decide.
    pub threads: usize,
    /// Simulated careers per run.
    pub n_players: usize,
    /// Confidence level of pooled intervals.
    pub level: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batting: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub people: Option<PathBuf>,
    /// Key-value fit file as written by `fit`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<PathBuf>,
    /// Panel CSV input for `impute`, `curve` and `fit`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub panel: Option<PathBuf>,
    pub grid: GridSection,
    pub transform: TransformSection,
    pub ingest: IngestSection,
    pub dropout: DropoutSection,
    pub mi: MiSection,
    pub loess: LoessSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            command: Command::default(),
            out: PathBuf::from("out"),
            seed: 1,
            threads: 0,
            n_players: 1000,
            level: 0.95,
            batting: None,
            people: None,
            fit: None,
            panel: None,
            grid: GridSection::default(),
            transform: TransformSection::default(),
            ingest: IngestSection::default(),
            dropout: DropoutSection::default(),
            mi: MiSection::default(),
            loess: LoessSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<AgeGrid, CliError> {
        AgeGrid::new(self.grid.age_min, self.grid.age_max).map_err(CliError::config)
    }

    pub fn transform(&self) -> Result<TransformSpec, CliError> {
        TransformSpec::new(self.transform.scale_min, self.transform.scale_max).map_err(CliError::config)
    }

    pub fn dropout(&self) -> DropoutSpec {
        let d = &self.dropout;
        DropoutSpec {
            mechanism: d.mechanism,
            threshold: d.threshold,
            retire_prob: d.retire_prob,
            retire_age: d.retire_age,
            early_last_age: d.early_last_age,
            window: d.window,
        }
    }

    pub fn mi(&self) -> MiConfig {
        MiConfig {
            m: self.mi.m,
            n_iter: self.mi.iters,
            seed: self.seed,
        }
    }

    pub fn loess(&self) -> LoessSpec {
        LoessSpec {
            span: self.loess.span,
            degree: self.loess.degree,
        }
    }

    /// Checks every parameter against its type invariants and that the
    /// inputs the command needs are present.
    pub fn validate(&self) -> Result<(), CliError> {
        let grid = self.grid()?;
        self.transform()?;
        self.dropout().validate().map_err(CliError::config)?;
        self.mi().validate().map_err(CliError::config)?;
        self.loess().validate().map_err(CliError::config)?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Config(format!("level {} not in (0, 1)", self.level)));
        }
        if self.n_players == 0 {
            return Err(CliError::Config("n_players must be >= 1".into()));
        }
        let d = &self.dropout;
        match d.mechanism {
            DropoutMechanism::RandomAt30 if grid.index_of(d.retire_age).is_none() => {
                return Err(CliError::Config(format!(
                    "retire_age {} outside the age grid",
                    d.retire_age
                )));
            }
            DropoutMechanism::EarlyCareer if grid.index_of(d.early_last_age).is_none() => {
                return Err(CliError::Config(format!(
                    "early_last_age {} outside the age grid",
                    d.early_last_age
                )));
            }
            _ => {}
        }
        let lahman = self.batting.is_some() && self.people.is_some();
        if self.batting.is_some() != self.people.is_some() {
            return Err(CliError::Config("--batting and --people must be given together".into()));
        }
        match self.command {
            Command::PipelineMlb if !lahman => {
                Err(CliError::Config("pipeline-mlb needs --batting and --people".into()))
            }
            Command::Impute | Command::Curve if self.panel.is_none() => {
                Err(CliError::Config(format!("{} needs --panel", self.command.name())))
            }
            Command::Fit if !lahman && self.panel.is_none() => {
                Err(CliError::Config("fit needs --batting/--people or --panel".into()))
            }
            _ => Ok(()),
        }
    }
}
