use std::path::PathBuf;

use thiserror::Error;

use crate::ontology::SymbolId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: `{field}`: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("type error: {0}")]
    Type(String),

    #[error("grammar error: {0}")]
    Grammar(String),

    #[error("generation failed after {tries} tries for template [{template}]")]
    Generation { template: String, tries: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("lexicon error: {0}")]
    Lexicon(String),

    #[error("no realization for symbol {0}")]
    MissingRealization(SymbolId),

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("vocabulary size {target} unreachable; training stopped at {achieved}")]
    VocabUnreachable { target: usize, achieved: usize },

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenRange { id: u32, vocab_size: usize },

    #[error("context of {len} tokens exceeds model context {max}")]
    Context { len: usize, max: usize },

    #[error("model fit error: {0}")]
    Fit(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("parse error in {what}: {reason}")]
    Parse { what: String, reason: String },

    #[error("stage `{stage}` failed (manifest: {}): {source}", manifest.display())]
    Stage {
        stage: &'static str,
        manifest: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            reason: reason.into(),
        }
    }
}
