use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },
    #[error("non-finite gradient at parameter index {index}; optimizer step aborted")]
    NonFiniteGradient { index: usize },
    #[error("replay shard is empty")]
    NotReady,
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("invalid action {action} (action count {count})")]
    InvalidAction { action: usize, count: usize },
    #[error("step called after episode end without reset")]
    EpisodeOver,
    #[error("pair queue closed")]
    Closed,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
