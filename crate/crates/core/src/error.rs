use thiserror::Error;

/// Errors raised anywhere in the surrogate / optimization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter interval ({a}, {b}): lower bound must be below upper bound")]
    InvalidInterval { a: f64, b: f64 },

    #[error("quadrature rule needs at least one node")]
    EmptyQuadrature,

    #[error("only scalar parameters are supported, got a parameter of dimension {0}")]
    ParameterDimension(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.6e})")]
    NotHurwitz { abscissa: f64 },

    #[error("gain is not admissible (spectral abscissa {abscissa:.6e})")]
    Inadmissible { abscissa: f64 },

    #[error("Schur decomposition did not converge")]
    SchurFailed,

    #[error("singular system while solving {0}")]
    Singular(&'static str),

    #[error("Riccati iteration failed: {0}")]
    Riccati(String),

    #[error("pair is not stabilizable: {0}")]
    Unstabilizable(String),

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
