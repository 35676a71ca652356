use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Matrix shapes do not fit together.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A state matrix has spectral radius at or above the stability margin.
    #[error("{what} is not asymptotically stable (spectral radius {radius:.6})")]
    Unstable { what: &'static str, radius: f64 },

    /// The resolvent `I - e^{iω}A` is singular at some grid point.
    #[error("singular resolvent at omega = {omega}")]
    SingularResolvent { omega: f64 },

    /// Estimator gain K does not stabilize A - KC.
    #[error("gain K is not admissible: spectral radius of A - KC is {radius:.6}")]
    InadmissibleGain { radius: f64 },

    /// Shaping parameters (S, L) fail positivity or closed-loop stability.
    #[error("shaping parameters are not admissible: {0}")]
    InadmissibleShaping(String),

    /// The Q-equation parameter q lies outside [0, theta).
    #[error("q = {q} is outside the admissible range [0, {theta})")]
    QOutOfRange { q: f64, theta: f64 },

    /// An iterative solver did not reach its tolerance.
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A matrix that has to be inverted is numerically singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// The requested anisotropy level could not be reached.
    #[error("anisotropy level {target} unreachable; largest achieved {best_a} at q = {best_q}")]
    UnreachableAnisotropy {
        target: f64,
        best_a: f64,
        best_q: f64,
    },

    /// The plant violates a standing assumption (stability of A, rank of D).
    #[error("{0}")]
    Assumption(String),

    /// Invalid argument value (negative level, empty grid, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
