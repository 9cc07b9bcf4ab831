//! Aging curves under player dropout.
//!
//! The crate covers the whole study: Lahman ingestion and the OPS response
//! transform, a cubic random-intercept mixed model fitted by EM, career
//! simulation with MAR/MCAR dropout, multilevel multiple imputation with a
//! two-level normal Gibbs sampler, Rubin's combining rules, loess aging
//! curves and imputation diagnostics.

pub mod curve;
pub mod diag;
pub mod error;
pub mod ingest;
pub mod lmm;
pub mod mi;
pub mod panel;
pub mod pool;
pub mod rng;
pub mod sim;
pub mod svg;
pub mod transform;

pub use curve::{curve_mae, fit_loess, panel_to_curve, AgingCurve, CellUse, LoessFit, LoessSpec, Units};
pub use diag::{kde, ks_distance, trace_stats, DensityEstimate, TraceTable};
pub use error::{Error, Result};
pub use ingest::{adjusted_age, build_panel, compute_ops, BattingRow, PersonRow};
pub use lmm::{fit_lmm, predict_mean, AgeBasis, LmmFit};
pub use mi::{impute, initialize_chain, ChainState, ImputationRun, MiConfig, TraceRow};
pub use panel::{panel_summary, AgeGrid, CareerPanel, CellState, PanelSummary, PlayerSeason};
pub use pool::{pool_curve, rubin_pool, PooledCurve, PooledEstimate};
pub use rng::SeededRng;
pub use sim::{apply_dropout, simulate_careers, DropoutMechanism, DropoutSpec};
pub use transform::{inverse_transform_ops, transform_ops, TransformSpec};
