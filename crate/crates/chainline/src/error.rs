use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map to the failure classes of the pipeline stages: parse errors
/// carry enough context (block height, txid, line number) to locate the bad
/// record in a multi-terabyte input without re-running anything.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("json error at {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    /// Malformed record content (bad number, missing field, bad line).
    #[error("parse error: {0}")]
    Parse(String),

    /// Structurally invalid block data (e.g. pubkey output with empty asm).
    #[error("structural error: {0}")]
    Structure(String),

    /// Input arrived in an order the stage cannot accept.
    #[error("sequencing error: {0}")]
    Sequencing(String),

    /// The data contradicts itself (hash-chain mismatch, unknown TIO).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Annotation stream does not line up with the chain traversal.
    #[error("annotation alignment error: {0}")]
    Alignment(String),

    /// An indexing-algorithm invariant was violated; the run must abort.
    #[error("indexing invariant violated: {0}")]
    Invariant(String),

    #[error("rpc error: {0}")]
    Rpc(String),

    /// Invalid configuration or rejected parameter spec.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Spill I/O failed; `runs` lists the partial run files left behind so
    /// the caller can clean up or inspect them.
    #[error("sort spill failure in {dir} ({detail}); partial runs: {runs:?}")]
    Spill {
        dir: PathBuf,
        detail: String,
        runs: Vec<PathBuf>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
