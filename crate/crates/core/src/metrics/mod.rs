//! Reliability and report computations.

mod coverage;
mod kappa;
mod reports;

use thiserror::Error;

pub use coverage::{unique_coverage, CoverageGroup, CoverageMatrix, GroupTally, UniqueCoverage};
pub use kappa::{cohen_kappa, Band, ContingencyTable, ReliabilityReport};
pub use reports::{
    count_with_percent, table2, table4, table5, ApproachCodes, ReportRow, ReportTable,
    ValidationInput,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("label sequences differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("no paired labels")]
    Empty,
    #[error("missing consensus decisions for {} (merged, coder) pair(s)", .0.len())]
    MissingConsensus(Vec<(String, String)>),
}
