use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Numeric(#[from] warpu::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// Process exit code: 2 for configuration problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numeric(warpu::Error::InvalidInput(_) | warpu::Error::DimensionMismatch { .. }) => 2,
            Self::Numeric(_) => 3,
            Self::Io(_) => 1,
        }
    }
}
