use thiserror::Error;

use crate::taxonomy::TaxonomyError;

/// Failures while reading or writing data files.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("input file contains no records")]
    Empty,
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl DataError {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        DataError::Parse { line, msg: msg.into() }
    }
}
