use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data does not match the declared schema (unknown feature, flag, column).
    #[error("{module}: schema error: {message}")]
    Schema { module: &'static str, message: String },

    /// A configuration value is out of its valid range.
    #[error("{module}: invalid parameter `{parameter}`: {message}")]
    Parameter {
        module: &'static str,
        parameter: &'static str,
        message: String,
    },

    #[error("{module}: empty input: {message}")]
    Empty { module: &'static str, message: String },

    /// A computation produced a non-finite value.
    #[error("{module}: numeric failure: {message}")]
    Numeric { module: &'static str, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn schema(module: &'static str, message: impl Into<String>) -> Self {
        Error::Schema {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn param(
        module: &'static str,
        parameter: &'static str,
        message: impl Into<String>,
    ) -> Self {
        Error::Parameter {
            module,
            parameter,
            message: message.into(),
        }
    }

    pub(crate) fn empty(module: &'static str, message: impl Into<String>) -> Self {
        Error::Empty {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn numeric(module: &'static str, message: impl Into<String>) -> Self {
        Error::Numeric {
            module,
            message: message.into(),
        }
    }

    /// Process exit code: 1 for input errors, 2 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } => 2,
            _ => 1,
        }
    }
}
