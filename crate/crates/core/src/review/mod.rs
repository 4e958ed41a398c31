//! Review workflows: blind coverage sessions, decisions, reconciliation
//! rounds and the quality labeling passes.

mod labels;
mod project;
mod server;
mod session;
mod store;

use thiserror::Error;

pub use labels::{Breadth, Dimension, Gain, Groundedness, QualityLabel, Source};
pub use project::{
    ALGORITHM, CodebookSuggestions, MessageView, PipelineDefaults, Project, ProjectConfig, ReportResponse,
    ReviewItem, SuggestionView, CODEBOOK_DIR, CORPUS_FILE, JOURNAL_FILE, MERGED_FILE, PROJECT_FILE,
};
pub use server::{router, serve, AppState, TOKEN_HEADER};
pub use session::{check_rounds, sample_ids, CoverageDecision, ReviewSession, SessionSpec};
pub use store::{Discrepancy, Event, JournalEntry, PairKappa, ReviewStore, CONSENSUS};

use crate::metrics::MetricsError;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("sample of {requested} exceeds the {population} merged codes available")]
    SampleTooLarge { requested: usize, population: usize },
    #[error("bad rounds: {0}")]
    BadRounds(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {0:?} already exists")]
    DuplicateSession(String),
    #[error("reviewer {0:?} is not part of this session")]
    UnknownReviewer(String),
    #[error("merged code {0:?} is not in this session")]
    UnknownMergedCode(String),
    #[error("codebook {0:?} is not judged in this session")]
    UnknownCoder(String),
    #[error("{target_id:?} is not a valid {dimension} target")]
    UnknownTarget { dimension: Dimension, target_id: String },
    #[error("item belongs to round {expected}, not {got}")]
    WrongRound { expected: usize, got: usize },
    #[error("unknown round {0}")]
    UnknownRound(usize),
    #[error("round {round} is incomplete ({missing} decision(s) missing)")]
    RoundIncomplete { round: usize, missing: usize },
    #[error("consensus on {merged_code_id}/{coder_id} needs decisions from two reviewers first")]
    ConsensusWithoutPriors { merged_code_id: String, coder_id: String },
    #[error("illegal value: {0}")]
    IllegalValue(String),
    #[error("{0}")]
    Invalid(String),
    #[error("unknown project {0:?}")]
    UnknownProject(String),
    #[error("project: {0}")]
    Project(String),
    #[error("journal: {0}")]
    Journal(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ReviewError {
    /// Stable snake_case name used in API error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            ReviewError::SampleTooLarge { .. } => "sample_too_large",
            ReviewError::BadRounds(_) => "bad_rounds",
            ReviewError::UnknownSession(_) => "unknown_session",
            ReviewError::DuplicateSession(_) => "duplicate_session",
            ReviewError::UnknownReviewer(_) => "unknown_reviewer",
            ReviewError::UnknownMergedCode(_) => "unknown_merged_code",
            ReviewError::UnknownCoder(_) => "unknown_coder",
            ReviewError::UnknownTarget { .. } => "unknown_target",
            ReviewError::WrongRound { .. } => "wrong_round",
            ReviewError::UnknownRound(_) => "unknown_round",
            ReviewError::RoundIncomplete { .. } => "round_incomplete",
            ReviewError::ConsensusWithoutPriors { .. } => "consensus_without_priors",
            ReviewError::IllegalValue(_) => "illegal_value",
            ReviewError::Invalid(_) => "invalid",
            ReviewError::UnknownProject(_) => "unknown_project",
            ReviewError::Project(_) => "project",
            ReviewError::Journal(_) => "journal",
            ReviewError::Metrics(_) => "metrics",
            ReviewError::Gateway(_) => "gateway",
            ReviewError::Io(_) => "io",
        }
    }
}
