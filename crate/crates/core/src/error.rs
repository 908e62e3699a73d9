use thiserror::Error;

/// Error kinds surfaced by the laboratory.
///
/// The variants map one-to-one onto the exit codes used by the command line
/// front-end (see [`LabError::exit_code`]).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("range error: {0}")]
    Range(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("domain error at stage {stage}: {msg}")]
    Domain { stage: usize, msg: String },
    #[error("resource cap exceeded: requested {requested} items, cap is {cap}")]
    Resource { requested: f64, cap: u64 },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("precision error: {0}")]
    Precision(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("config error: {0}")]
    Config(String),
}

impl LabError {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Range(_) => "range",
            LabError::Contract(_) => "contract",
            LabError::Domain { .. } => "domain",
            LabError::Resource { .. } => "resource",
            LabError::Numeric(_) => "numeric",
            LabError::Precision(_) => "precision",
            LabError::Invariant(_) => "invariant",
            LabError::Capability(_) => "capability",
            LabError::Config(_) => "config",
        }
    }

    /// Process exit code: 2 config, 3 precision, 4 resource cap, 5 invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Capability(_) => 2,
            LabError::Precision(_) | LabError::Numeric(_) => 3,
            LabError::Resource { .. } => 4,
            LabError::Range(_)
            | LabError::Contract(_)
            | LabError::Domain { .. }
            | LabError::Invariant(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
