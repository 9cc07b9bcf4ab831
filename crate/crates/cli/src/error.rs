use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad configuration: {0}")]
    Config(String),

    #[error("ingest failed: {0}")]
    Ingest(#[source] aging_core::Error),

    #[error("{stage} failed: {source}")]
    Numeric {
        stage: &'static str,
        #[source]
        source: aging_core::Error,
    },

    #[error("writing {}: {message}", path.display())]
    Output { path: PathBuf, message: String },
}

impl CliError {
    pub fn config(e: aging_core::Error) -> Self {
        Self::Config(e.to_string())
    }

    pub fn numeric(stage: &'static str) -> impl FnOnce(aging_core::Error) -> Self {
        move |source| Self::Numeric { stage, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Ingest(_) => 3,
            Self::Numeric { .. } => 4,
            Self::Output { .. } => 1,
        }
    }

    pub fn stage(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Ingest(_) => "ingest",
            Self::Numeric { stage, .. } => stage,
            Self::Output { .. } => "output",
        }
    }
}
