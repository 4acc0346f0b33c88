use std::path::PathBuf;

/// Errors produced anywhere in the library.
///
/// The CLI maps these onto exit codes, so the variant split mirrors the
/// failure classes a run can hit: bad configuration, bad data, an
/// incompatible weight transfer, or a numeric/contract failure at runtime.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes disagree; names the operation and the offending operand.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// Invalid run or layer configuration (bad rate, bad clip bound, ...).
    #[error("config error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Binary file parsing failed; `offset` is the byte position of the fault.
    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: u64, detail: String },

    /// Dataset-level problem (empty set, count mismatch, missing file).
    #[error("data error: {0}")]
    Data(String),

    /// Decoder and generator parameter stores are not transfer-compatible.
    /// Carries the complete list of differences; no partial transfer happens.
    #[error("transfer mismatch ({} difference(s)):\n{}", differences.len(), differences.join("\n"))]
    TransferMismatch { differences: Vec<String> },

    /// A non-finite value or other numeric failure surfaced during a run.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(offset: u64, detail: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
