//! Corpus handling, vocabularies, training and evaluation runs, and the
//! `asttf` command line.

pub mod commands;
pub mod config;
pub mod corpus;
pub mod diagnostics;
pub mod pipeline;
pub mod vocab;

use std::path::{Path, PathBuf};

use asttf_core::metrics::MetricError;
use asttf_model::ModelError;
use thiserror::Error;

pub use commands::run_cli;
pub use config::{PipelineConfig, RunConfig};
pub use corpus::{generate_corpus, CorpusExample};
pub use pipeline::{encode_example, evaluate, train, EncodeOptions, EvalReport, EvalResult, Vocabs};
pub use vocab::Vocab;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error("example {id}: {message}")]
    Example { id: String, message: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_owned(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}
