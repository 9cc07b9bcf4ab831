//! Command-line flags. Each flag, when given, overrides the config file.

use std::path::PathBuf;

use aging_core::DropoutMechanism;
use clap::{Args, Parser, Subcommand};

use crate::config::{Command, PipelineConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "aging", version, about = "Aging curves under player dropout")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Fit the cubic random-intercept model to Lahman tables or a panel CSV.
    Fit(Flags),
    /// Simulate careers from a fit and apply a dropout mechanism.
    Simulate(Flags),
    /// Multiply impute the missing cells of a panel CSV.
    Impute(Flags),
    /// Loess aging curve of the observed cells of a panel CSV.
    Curve(Flags),
    /// Full simulation study: fit, simulate, dropout, impute, pool, diagnose.
    PipelineSim(Flags),
    /// MLB application: ingest Lahman tables, impute, pool.
    PipelineMlb(Flags),
    /// Re-run whatever command a config file or manifest names.
    Run(Flags),
}

fn parse_mechanism(s: &str) -> Result<DropoutMechanism, String> {
    s.parse().map_err(|e: aging_core::Error| e.to_string())
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML config file (a run manifest works too).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub batting: Option<PathBuf>,
    #[arg(long)]
    pub people: Option<PathBuf>,
    /// Fit file written by `fit`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Panel CSV (`player_id,age,value,observed`).
    #[arg(long)]
    pub panel: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of imputations.
    #[arg(long)]
    pub m: Option<usize>,
    /// Gibbs iterations per imputation.
    #[arg(long)]
    pub iters: Option<usize>,
    /// rolling4, early or random30.
    #[arg(long, value_parser = parse_mechanism)]
    pub mechanism: Option<DropoutMechanism>,
    /// Dropout threshold in OPS units.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub retire_prob: Option<f64>,
    #[arg(long)]
    pub span: Option<f64>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub min_pa: Option<u32>,
    #[arg(long)]
    pub min_debut: Option<i32>,
    #[arg(long)]
    pub age_min: Option<i32>,
    #[arg(long)]
    pub age_max: Option<i32>,
    /// Simulated careers.
    #[arg(long)]
    pub players: Option<usize>,
    /// Worker threads for imputation chains (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Flags {
    /// Config file (or defaults) with every given flag applied on top.
    pub fn resolve(&self, command: Option<Command>) -> Result<PipelineConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None if command.is_none() => {
                return Err(CliError::Config("`run` needs --config".into()));
            }
            None => PipelineConfig::default(),
        };
        if let Some(cmd) = command {
            c.command = cmd;
        }
        macro_rules! set {
            ($flag:ident => $($field:ident).+) => {
                if let Some(v) = &self.$flag {
                    c.$($field).+ = v.clone();
                }
            };
        }
        macro_rules! set_opt {
            ($flag:ident) => {
                if self.$flag.is_some() {
                    c.$flag = self.$flag.clone();
                }
            };
        }
        set_opt!(batting);
        set_opt!(people);
        set_opt!(fit);
        set_opt!(panel);
        set!(out => out);
        set!(seed => seed);
        set!(m => mi.m);
        set!(iters => mi.iters);
        set!(mechanism => dropout.mechanism);
        set!(threshold => dropout.threshold);
        set!(retire_prob => dropout.retire_prob);
        set!(span => loess.span);
        set!(degree => loess.degree);
        set!(min_pa => ingest.min_pa);
        set!(min_debut => ingest.min_debut);
        set!(age_min => grid.age_min);
        set!(age_max => grid.age_max);
        set!(players => n_players);
        set!(threads => threads);
        Ok(c)
    }
}

impl Cli {
    pub fn into_config(self) -> Result<PipelineConfig, CliError> {
        let (flags, command) = match self.command {
            Cmd::Fit(f) => (f, Some(Command::Fit)),
            Cmd::Simulate(f) => (f, Some(Command::Simulate)),
            Cmd::Impute(f) => (f, Some(Command::Impute)),
            Cmd::Curve(f) => (f, Some(Command::Curve)),
            Cmd::PipelineSim(f) => (f, Some(Command::PipelineSim)),
            Cmd::PipelineMlb(f) => (f, Some(Command::PipelineMlb)),
            Cmd::Run(f) => (f, None),
        };
        flags.resolve(command)
    }
}
