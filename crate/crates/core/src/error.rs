use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("value {value} outside transform range [0, pi/2]")]
    OutOfRange { value: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("no eligible cells at age {age}")]
    EmptyAge { age: i32 },

    #[error("grid or unit mismatch: {0}")]
    Mismatch(String),

    #[error("ingest produced no players")]
    EmptyPanel,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
