use thiserror::Error;

use crate::model::Symbol;

/// Errors produced while building, analysing or sampling a model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("alphabet needs at least 2 symbols, got {0}")]
    AlphabetTooSmall(usize),
    #[error("symbol names must be non-empty (position {0})")]
    EmptySymbolName(usize),
    #[error("duplicate symbol `{0}`")]
    DuplicateSymbol(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("symbol index {0} out of range")]
    SymbolOutOfRange(Symbol),
    #[error("start set must be non-empty")]
    EmptyStartSet,
    #[error("start set must be strict subset of the alphabet")]
    StartSetNotStrict,
    #[error("invalid class partition: {0}")]
    InvalidPartition(String),
    #[error("missing region law for start symbol `{0}`")]
    MissingLaw(String),
    #[error("region law given for `{0}`, which is not a start symbol")]
    UnexpectedLaw(String),
    #[error("kernel of law `{law}` has {found} rows/columns where {expected} were expected (row {row})")]
    KernelShape {
        law: String,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("kernel of law `{law}`: entry ({row_name}, {col_name}) = {value} is not a probability")]
    KernelEntry {
        law: String,
        row_name: String,
        col_name: String,
        value: f64,
    },
    #[error("kernel of law `{law}`: row {row} (`{row_name}`) sums to {sum}, not 1")]
    KernelRowSum {
        law: String,
        row: usize,
        row_name: String,
        sum: f64,
    },
    #[error("`{0}` is not a start symbol")]
    NotAStartSymbol(String),
    #[error("region from `{start}` not absorbed within {cap} steps")]
    Truncated {
        start: String,
        cap: usize,
        path: Vec<Symbol>,
    },
    #[error("region from `{start}` is not absorbed almost surely (transient spectral radius {spectral_radius})")]
    NonAbsorbing { start: String, spectral_radius: f64 },
    #[error("acceptance probability for `{symbol}` must lie in (0, 1], got {value}")]
    InvalidEpsilon { symbol: String, value: f64 },
    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),
    #[error("weights are not strictly positive: {0}")]
    NonPositiveWeights(String),
    #[error("model is not in its stationary regime (invariance residual {0:e})")]
    NotStationary(f64),
    #[error("empty word")]
    EmptyWord,
    #[error("empty word set (max_len must be >= 1)")]
    EmptyWordSet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("aperiodicity test inconclusive: {0}")]
    Inconclusive(String),
    #[error("conditioned region from `{start}` with age {age} not obtained after {attempts} attempts")]
    RejectionCap {
        start: String,
        age: usize,
        attempts: usize,
    },
    #[error("invalid involution: {0}")]
    InvalidInvolution(String),
    #[error("unknown symbol `{ch}` at position {position}")]
    UnknownSequenceSymbol { ch: char, position: usize },
    #[error("sequence of length {len} is shorter than k = {k}")]
    SequenceTooShort { len: usize, k: usize },
    #[error("word encoding overflow: alphabet of size {size} with words of length {k}")]
    EncodingOverflow { size: usize, k: usize },
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("FASTA error in record {record} at offset {offset}: {message}")]
    Fasta {
        record: usize,
        offset: usize,
        message: String,
    },
    #[error("linear solve failed: {0}")]
    Singular(String),
}

pub type Result<T> = std::result::Result<T, Error>;
