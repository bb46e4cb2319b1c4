use ncdsearch_core::evaluation::EvalError;
use ncdsearch_core::{ConfigError, CorpusError, EngineError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, flags or configuration.
    #[error("{0}")]
    Usage(String),
    /// Missing, unreadable or inconsistent data.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(format!("invalid configuration: {e}"))
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Config(c) => c.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::EmptyQuery | EngineError::Alpha(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::FragmentTooShort(_) | EvalError::AlphaGrid => CliError::Usage(e.to_string()),
            EvalError::Corpus(c) => c.into(),
            EvalError::Engine(en) => en.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
