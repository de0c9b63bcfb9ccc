use thiserror::Error;

pub type Result<T> = std::result::Result<T, TispError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TispError {
    /// A rule, option or tuning parameter lies outside its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A response value is outside the family's support.
    #[error("response at index {index} is outside the support of the {family} family: {value}")]
    Support {
        index: usize,
        family: &'static str,
        value: f64,
    },

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("degenerate lambda grid: {0}")]
    DegenerateGrid(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

impl TispError {
    /// True for errors caused by the data rather than the configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(self, TispError::Support { .. } | TispError::Dimension(_))
    }
}
