use thiserror::Error;

pub type Result<T, E = GemError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GemError {
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("token id {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("group of {0} rewards is too small; at least 2 are required")]
    GroupTooSmall(usize),

    #[error("non-finite gradient produced by group {group}")]
    NonFiniteGradient { group: usize },

    #[error("non-finite loss at step {step} (group {group})")]
    NonFiniteLoss { step: usize, group: usize },

    #[error("budget {budget} exceeds training set of {available} records")]
    BudgetExceedsDataset { budget: usize, available: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GemError {
    /// Whether the error stems from user-supplied configuration rather than
    /// a failure during execution.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            GemError::InvalidConfig(_)
                | GemError::InvalidVocabulary(_)
                | GemError::BudgetExceedsDataset { .. }
        )
    }
}
