//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus {path} contains no non-blank lines")]
    EmptyCorpus { path: PathBuf },

    #[error("subword budget {given} too small: need at least {needed} for character coverage")]
    SubwordBudget { needed: usize, given: usize },

    #[error("cannot segment {word:?}: character {ch:?} is outside the inventory alphabet")]
    UnknownChar { word: String, ch: char },

    #[error("cannot segment {word:?} with this inventory")]
    Unsegmentable { word: String },

    #[error("n-gram order {0} out of range (expected 1..=4)")]
    OrderRange(usize),

    #[error("count table is empty")]
    EmptyCounts,

    #[error("model has no n-gram entries")]
    EmptyModel,

    #[error("discount cutoff must be >= 1")]
    DiscountCutoff,

    #[error("interpolation components disagree on order ({0} vs {1})")]
    MismatchedOrders(usize, usize),

    #[error("interpolation needs at least one component")]
    EmptyComponents,

    #[error("interpolation weights invalid: {0}")]
    BadWeights(String),

    #[error("prune budget {given} below the {min} unprunable entries")]
    PruneBudget { min: usize, given: usize },

    #[error("{path}:{line}: malformed ARPA file: {msg}")]
    ArpaFormat {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: malformed boost table: {msg}")]
    TableFormat {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: malformed fst file: {msg}")]
    FstFormat {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: malformed inventory file: {msg}")]
    InventoryFormat {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: malformed testset: {msg}")]
    TestsetFormat {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: malformed n-best file: {msg}")]
    NbestFormat {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("n-gram must have between 1 and {max} words, got {got}")]
    NgramLength { max: usize, got: usize },

    #[error("invalid decoder parameter: {0}")]
    DecoderParam(String),

    #[error("posterior sequence is empty")]
    EmptyPosterior,

    #[error("n-best list is empty")]
    EmptyNBest,

    #[error("reference transcript is empty")]
    EmptyReference,

    #[error("baseline WER is zero; relative reduction undefined")]
    ZeroBaseline,

    #[error("sweep needs a non-empty grid and at least one testset")]
    EmptySweep,
}
