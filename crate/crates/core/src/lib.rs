//! In-vitro laboratory for cross-lingual transfer.
//!
//! Two procedurally generated languages share one ontology and grammar but
//! differ in their lexical realizations. The crate builds both languages,
//! assembles mixed corpora with a withheld set of minority-language forms,
//! trains BPE tokenizers and small language models on them, and measures how
//! much of the majority language's knowledge reaches the withheld forms.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod grammar;
pub mod lexicon;
pub mod lm;
pub mod ontology;
pub mod rng;
pub mod runner;
pub mod tokenizer;

pub use error::{Error, Result};
