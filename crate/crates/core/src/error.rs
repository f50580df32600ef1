use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("matrix is not positive definite (pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("factorization failed at sinc node {node}: {source}")]
    NodeFactorization {
        node: i64,
        #[source]
        source: Box<Error>,
    },

    #[error("{method} did not converge in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { method: &'static str, iterations: usize, residual: f64 },

    #[error("{0} breakdown")]
    Breakdown(&'static str),

    #[error("conjugate gradient applied to an operator that is not symmetric")]
    NonSymmetricOperator,

    #[error("inner solve failed at outer iteration {iteration}: {source}")]
    InnerSolve {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("outer iteration cap of {0} exceeded")]
    OuterCap(usize),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the CLI: 2 for configuration problems,
    /// 3 for everything that went wrong while solving.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::InnerSolve { source, .. } | Error::NodeFactorization { source, .. } => match source.as_ref() {
                Error::Config(_) => 2,
                _ => 3,
            },
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
