//! Numerical laboratory for a coupled nonlocal diffusion system with three
//! fractional kernels: an interval carries one jump exponent, its exterior a
//! second, and a third kernel couples the two regions. The crate discretizes
//! the operator on a truncated 1D grid, evolves the gradient flow by implicit
//! Euler, evaluates the fractional heat kernel, and ships experiment drivers
//! that measure decay rates, self-similar profiles, and the functional
//! inequalities behind them.

use thiserror::Error;

pub mod analysis;
pub mod cli;
pub mod config;
pub mod inequalities;
pub mod integrator;
pub mod kernel;
pub mod operator;
pub mod quadrature;

/// Crate-wide error type. Variants map onto the CLI exit classes:
/// input/validation problems exit 1, numerical failures exit 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("quadrature domain error: {0}")]
    QuadratureDomain(String),
    #[error("singular endpoint: {0}")]
    SingularEndpoint(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("window error: {0}")]
    Window(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("hypothesis violation: {0}")]
    Hypothesis(String),
    #[error("no stored snapshot at requested time: {0}")]
    NearestSnapshot(String),
    #[error("solver stagnation: {0}")]
    SolverStagnation(String),
    #[error("accuracy error: {0}")]
    Accuracy(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::SolverStagnation(_) | Error::Accuracy(_) | Error::NearestSnapshot(_) | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
