use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("KPI window holds no samples")]
    EmptyWindow,

    #[error(
        "{count} RBG combinations exceed the cap of {cap}; use a coarser RBG granularity"
    )]
    TooManyCombinations { count: u128, cap: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last_good: Box<crate::hdm::HdmModel>,
    },

    #[error("unknown scenario id {0:?}")]
    UnknownScenario(String),

    #[error("dataset format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
