use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid distribution, model, wiring or run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A state coordinate became NaN or infinite.
    #[error("numeric overflow{}: state {state:?}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NumericOverflow { step: Option<usize>, state: Vec<f64> },

    /// The resident community of a boundary face did not persist, so an
    /// invasion rate against it is not defined.
    #[error("face {support:?} is degenerate: replicate {replicate} hit the extinction floor")]
    FaceDegenerate { support: Vec<usize>, replicate: usize },

    /// The model violated a structural assumption (e.g. a product of
    /// nonnegative matrices collapsed to the zero vector).
    #[error("model violation: {0}")]
    ModelViolation(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    /// A drift inequality V(F(x,w)) <= alpha(w) V(x) + beta(w) failed at a sampled pair.
    #[error("drift inequality violated at x={x:?}, w={omega:?}: lhs {lhs} > rhs {rhs}")]
    DriftViolation {
        x: Vec<f64>,
        omega: Vec<f64>,
        lhs: f64,
        rhs: f64,
    },

    #[error("argument out of domain: {0}")]
    Domain(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
