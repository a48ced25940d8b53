//! Adaptation toolkit for sequence decoders: likelihood-ratio-selected
//! n-gram boosting compiled into a weighted transducer, applied with shallow
//! fusion during beam search, with second-pass rescoring and a WER sweep
//! harness. A seeded surrogate channel stands in for the acoustic model so
//! the whole pipeline runs and verifies at desk scale.

pub mod corpus;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod fst;
pub mod llr;
pub mod ngram;
pub mod pipeline;
pub mod rescore;
pub mod synth;

pub use error::{Error, Result};
