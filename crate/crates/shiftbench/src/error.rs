//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ShiftError>;

/// All failure modes of the library.
///
/// Variants are grouped by how the CLI maps them onto exit codes:
/// configuration/usage problems, data problems, and numeric failures.
/// See [`ShiftError::exit_class`].
#[derive(Debug, Error)]
pub enum ShiftError {
    // --- configuration / usage ---
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("config error: {0}")]
    Config(String),

    // --- data ---
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty input")]
    EmptyInput,
    #[error("empty set")]
    EmptySet,
    #[error("dim mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(
        "insufficient pool mass near requested target distribution: \
         requested {requested}, accepted {accepted}"
    )]
    InsufficientPool { requested: usize, accepted: usize },
    #[error("group {group} has no rows")]
    EmptyGroup { group: i64 },
    #[error("requested {requested} rows but only {available} available")]
    NotEnoughRows { requested: usize, available: usize },
    #[error("degenerate labels: need at least two classes")]
    DegenerateLabels,
    #[error("class id {id} out of range for {classes} classes")]
    BadClassId { id: i64, classes: usize },
    #[error("outfit needs at least {min} items, got {got}")]
    OutfitTooSmall { min: usize, got: usize },
    #[error("need at least {min} outfits, got {got}")]
    TooFewOutfits { min: usize, got: usize },
    #[error("record parse error at line {line}: {message}")]
    RecordParse { line: usize, message: String },
    #[error("record invariant violated at line {line}: {message}")]
    RecordInvariant { line: usize, message: String },
    #[error("missing item features for {count} item(s), first offenders: {sample:?}")]
    MissingFeatures { count: usize, sample: Vec<i64> },
    #[error("feature file malformed: {0}")]
    FeatureFile(String),
    #[error("auc requires both label classes present")]
    SingleClassAuc,
    #[error("w bucket {bucket} unreachable: realized magnitude {realized:.4}")]
    UnreachableBucket { bucket: f64, realized: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    // --- numeric ---
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("negative weight at index {index}")]
    NegativeWeight { index: usize },
    #[error("both densities zero at index {index}")]
    ZeroDensityPair { index: usize },
    #[error("all weights are zero")]
    AllZeroWeights,
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("pair probability {value} outside [0,1] at index {index}")]
    ProbOutOfRange { index: usize, value: f64 },
}

impl ShiftError {
    /// Exit-code class for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_class(&self) -> u8 {
        use ShiftError::*;
        match self {
            InvalidParam { .. } | Config(_) => 1,
            NonFinite { .. }
            | NegativeWeight { .. }
            | ZeroDensityPair { .. }
            | AllZeroWeights
            | NonFiniteLoss { .. }
            | ProbOutOfRange { .. } => 3,
            _ => 2,
        }
    }
}
