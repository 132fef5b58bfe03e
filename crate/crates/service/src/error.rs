use sbac_core::analysis::{LedgerError, StageError};
use sbac_core::marks::MarkError;
use sbac_core::prompt::PromptError;
use sbac_core::ripple::RippleError;

use crate::gateway::TransportError;
use crate::session::Stage;
use crate::store::StorageError;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no session {0}")]
    NotFound(String),
    #[error("session {0} is busy with another request")]
    Busy(String),
    #[error("cannot move from {from} to {to}")]
    IllegalTransition { from: Stage, to: Stage },
    #[error("not available in the {0} stage")]
    WrongStage(Stage),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no {0} is pending")]
    NothingPending(&'static str),
    #[error("identification invalid: {0}")]
    IdentificationInvalid(String),
    #[error("analysis unavailable: {0}")]
    AnalysisUnavailable(String),
    #[error("clarification unavailable: {0}")]
    ClarifyUnavailable(String),
    #[error("test generation unavailable: {0}")]
    TestUnavailable(String),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Ripple(#[from] RippleError),
    #[error(transparent)]
    Mark(#[from] MarkError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
