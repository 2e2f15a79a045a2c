use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),
    /// A functional or generator produced an unusable value.
    #[error("evaluation error: {0}")]
    Evaluation(String),
    /// A tree, lattice or enumeration would exceed its configured cap.
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    /// Least-squares regression could not be carried out.
    #[error("regression failure: {0}")]
    Regression(String),
    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
