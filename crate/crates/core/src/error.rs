use thiserror::Error;

/// Errors produced by construction, validation and solver orchestration.
///
/// Shape mismatches in hot-path matvecs (`apply`/`apply_adjoint`) panic
/// instead, mirroring the dense linear algebra crates this library builds on.
#[derive(Debug, Error)]
pub enum GiasError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inadmissible hyper-prior: {0}")]
    InadmissiblePrior(String),

    #[error("common kernel condition violated: {0}")]
    CommonKernel(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("size guard exceeded: {0}")]
    SizeGuard(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    Format(String),
}
