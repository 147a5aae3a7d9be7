use thiserror::Error;

pub type Result<T> = std::result::Result<T, MispError>;

/// Every failure the library reports, grouped by category so the CLI can map
/// them onto stable exit codes.
#[derive(Debug, Error)]
pub enum MispError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl MispError {
    /// Short machine-parseable category tag.
    pub fn category(&self) -> &'static str {
        match self {
            MispError::Config(_) => "config",
            MispError::Validation(_) => "validation",
            MispError::Domain(_) => "domain",
            MispError::Index(_) => "index",
            MispError::Numerical(_) => "numerical",
            MispError::Input(_) => "input",
            MispError::Plan(_) => "plan",
            MispError::Sampler(_) => "sampler",
            MispError::Io(_) => "io",
            MispError::Csv(_) => "csv",
        }
    }
}
