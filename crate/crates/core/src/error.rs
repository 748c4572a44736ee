use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
pub enum ListError {
    #[error("node not found")]
    NodeNotFound,
    #[error("operation not allowed on a sentinel")]
    SentinelTarget,
    #[error("unknown reference")]
    UnknownRef,
    #[error("a transformation is active on this sublist")]
    Busy,
    #[error("reference lease expired")]
    LeaseExpired,
    #[error("key already exists")]
    DuplicateKey,
    #[error("not found")]
    NotFound,
}

pub type Result<T> = std::result::Result<T, ListError>;
