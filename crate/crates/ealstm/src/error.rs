use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code classes
/// (usage/config, data, numeric, I/O), so construction sites should pick
/// the variant by failure class, not by module.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad dimensions, inconsistent shapes,
    /// unusable option combinations. Message names the offending field.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed, inconsistent or missing input data (ingestion failures,
    /// unknown basin ids, schema mismatches).
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values or degenerate numerical situations. Message names
    /// the sample, step or feature where the failure occurred.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A metric or signature could not be computed (zero variance,
    /// degenerate segments, insufficient record length).
    #[error("metric error: {0}")]
    Metric(String),

    /// Parse failure in a config, space or table file.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 usage/config, 3 data, 4 numeric
    /// (incl. metric), 5 I/O, 6 parse.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Numeric(_) | Error::Metric(_) => 4,
            Error::Io(_) => 5,
            Error::Parse(_) => 6,
        }
    }
}
