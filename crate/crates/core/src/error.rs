use thiserror::Error;

use crate::ledger::{TxId, WalletId};

/// Errors raised by the simulator and its building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid operation: {0}")]
    InvalidOperation(String),

    #[error("unknown wallet `{0}`")]
    UnknownWallet(WalletId),

    #[error("duplicate transaction id {0}")]
    DuplicateTxId(TxId),

    #[error("transaction {0} compared with itself")]
    SelfComparison(TxId),

    #[error("conflict graph has no node for transaction {0}")]
    MissingGraphNode(TxId),

    #[error("invalid config `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("unknown scheme `{0}` (expected fifo|timestamp|grouped|locking|conchain)")]
    UnknownScheme(String),

    #[error("need at least {needed} transactions, got {got}")]
    TooFewTransactions { needed: usize, got: usize },

    #[error("serial replay diverged at transaction {tx}: {status}")]
    ReplayDiverged { tx: TxId, status: String },

    #[error("scenario mismatch: {0}")]
    ScenarioMismatch(String),

    #[error("malformed workload record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
