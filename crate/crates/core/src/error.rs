use thiserror::Error;

use crate::backend::BackendError;
use crate::domain::CoreError;
use crate::harness::dataset::DatasetError;
use crate::prompting::PromptError;
use crate::templates::TemplateError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("every candidate for instance `{0}` failed to parse")]
    AllParsesFailed(String),
    #[error("no training instance produced a negative explanation")]
    EmptyDemoSet,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
