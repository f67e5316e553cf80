use thiserror::Error;

use crate::block::Dims;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlockError {
    #[error("unsupported block shape {rows}x{cols} (expected 8x8 or 1x2)")]
    UnsupportedDims { rows: usize, cols: usize },
    #[error("block needs {expected} values, got {found}")]
    Length { expected: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimsMismatch { expected: Dims, found: Dims },
    #[error("coefficient {value} outside the 8-bit baseline range")]
    CoefficientRange { value: i32 },
    #[error("quantization step {index} is zero")]
    ZeroStep { index: usize },
    #[error("quality factor {0} outside 1..=100")]
    Quality(u8),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error("the islow transform is only defined for 8x8 blocks")]
    IslowDims,
    #[error("operation requires the 1x2 toy pipeline, got {0}")]
    NotToy(Dims),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Text { line: usize, message: String },
    #[error("binary fixture: {0}")]
    Binary(String),
    #[error(transparent)]
    Block(#[from] BlockError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("search budget must be at least one iteration")]
    ZeroBudget,
}

impl From<BlockError> for SearchError {
    fn from(e: BlockError) -> Self {
        SearchError::Codec(e.into())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IlpError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("feasibility models need a linear, exactly invertible transform; islow is neither")]
    UnsupportedVariant,
    #[error("node budget must be at least one")]
    ZeroBudget,
}

impl From<BlockError> for IlpError {
    fn from(e: BlockError) -> Self {
        IlpError::Codec(e.into())
    }
}

#[derive(Debug, Error)]
pub enum StatsError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("modification count {0} outside 0..=64")]
    ModificationCount(usize),
    #[error("payload {0} bpp outside [0, 1]")]
    Payload(f64),
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("block source exhausted after {available} usable blocks ({needed} needed)")]
    InsufficientBlocks { needed: usize, available: usize },
    #[error("sample count must be positive")]
    NoSamples,
    #[error("likelihood table: {0}")]
    Table(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl From<BlockError> for StatsError {
    fn from(e: BlockError) -> Self {
        StatsError::Codec(e.into())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("likelihood table built for pipeline {table}, analysis uses {analysis}")]
    PipelineMismatch { table: String, analysis: String },
    #[error("{needed} p-maps required, {found} supplied")]
    MissingPmaps { needed: usize, found: usize },
    #[error("no blocks to select from")]
    Empty,
    #[error("selection fraction {0} outside (0, 1]")]
    Fraction(f64),
    #[error("score lists must be non-empty")]
    EmptyScores,
    #[error("outcome vector has {outcomes} entries but {priors} priors were supplied")]
    PriorCount { outcomes: usize, priors: usize },
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("invalid prior: {0}")]
    Prior(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JpegError {
    #[error("unsupported JPEG: {0}")]
    UnsupportedFormat(String),
    #[error("malformed JPEG at byte {offset}: {message}")]
    ParseError { offset: usize, message: String },
}
