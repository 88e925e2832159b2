use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("degenerate boundary face {0}: zero area")]
    DegenerateFace(usize),

    #[error("inverted element {element}: jacobian determinant {det:e}")]
    InvertedElement { element: usize, det: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("material contract violated: {0}")]
    Material(String),

    #[error("quadrature exactness {got} below required {required}")]
    QuadratureTooWeak { got: usize, required: usize },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("grounding residual {residual:e} above tolerance")]
    Grounding { residual: f64 },

    #[error("time grid mismatch: {0}")]
    GridMismatch(String),

    #[error("infeasible bounds [{lower}, {upper}]: must satisfy lower <= 0 <= upper")]
    InfeasibleBounds { lower: f64, upper: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
