use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("fine subdivisions {fine_n} are not a positive multiple of coarse subdivisions {coarse_n}")]
    NonNestedMeshes { coarse_n: usize, fine_n: usize },

    #[error("invalid configuration field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    /// Factorization failed or produced a non-finite solution.
    #[error("singular system ({context}): bad pivot at unknown {index} (node {node})")]
    Singular {
        context: String,
        index: usize,
        node: usize,
    },

    #[error("system ({context}) did not reach the residual tolerance: {residual:.3e} > {tol:.3e}")]
    Residual {
        context: String,
        residual: f64,
        tol: f64,
    },

    /// The Petrov-Galerkin matrix is numerically singular, usually because
    /// the localization parameter is too small.
    #[error("coarse Petrov-Galerkin system is near-singular (1-norm condition estimate {condition:.3e}); try a larger ell")]
    NearSingular { condition: f64 },

    #[error("y = {y} is not a fine grid line; nearest valid values are {below} and {above}")]
    NotGridLine { y: f64, below: f64, above: f64 },

    #[error("corrector solve failed for coarse node {node}, element {element}: {source}")]
    Corrector {
        node: usize,
        element: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
