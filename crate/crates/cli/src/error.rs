use thiserror::Error;
use tisp::TispError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Solver(_) => 4,
            CliError::Output(_) => 5,
        }
    }

    pub fn io(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<TispError> for CliError {
    fn from(e: TispError) -> Self {
        match e {
            e if e.is_data_error() => CliError::Data(e.to_string()),
            TispError::InvalidParameter(_) | TispError::DegenerateGrid(_) => {
                CliError::Config(e.to_string())
            }
            e => CliError::Solver(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_codes() {
        let code = |e: TispError| CliError::from(e).exit_code();
        assert_eq!(code(TispError::InvalidParameter("x".into())), 2);
        assert_eq!(code(TispError::DegenerateGrid("x".into())), 2);
        assert_eq!(code(TispError::Dimension("x".into())), 3);
        assert_eq!(code(TispError::Support { index: 0, family: "bernoulli", value: 2.0 }), 3);
        assert_eq!(code(TispError::Divergence("x".into())), 4);
    }
}
