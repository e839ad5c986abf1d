//! Numerical toolkit for spectral distributions of self-adjoint polynomials in free
//! semicircular elements and deterministic Hermitian matrices.
//!
//! The pipeline: represent a noncommutative *-polynomial ([`ncalg`]), build its
//! self-adjoint linearization pencil ([`linearize`]), solve the operator-valued
//! subordination fixed point for the matrix Stieltjes transform ([`subord`]), invert to
//! densities / supports / norms ([`spectra`]), and check the predictions against
//! simulated Wigner ensembles ([`rmt`], [`harness`]).

// Force the BLAS backend link even though we only call it through ndarray/-linalg.
extern crate blas_src;

pub mod harness;
pub mod linearize;
pub mod matops;
pub mod ncalg;
pub mod rmt;
pub mod spectra;
pub mod subord;

pub use num_complex::Complex64;

/// Dense complex matrix used throughout.
pub type CMat = ndarray::Array2<Complex64>;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("size mismatch: {0}")]
    Size(String),

    #[error("matrix is not Hermitian (relative deviation {deviation:.3e}, tolerance {tolerance:.1e})")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("matrix is not in the upper half-plane (min eigenvalue of imaginary part {min_imag_eig:.3e})")]
    NotHalfPlane { min_imag_eig: f64 },

    #[error("pencil is numerically singular or ill-conditioned (condition estimate {estimate:.3e})")]
    IllConditioned { estimate: f64 },

    #[error("evaluation point lies in the spectrum: {0}")]
    SpectralPoint(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    NonConvergence {
        residual: f64,
        tolerance: f64,
        iterations: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("parse error at {position}: {message}")]
    Parse { message: String, position: usize },

    #[error("density came out significantly negative ({value:.3e} at x = {x}); solver quality insufficient")]
    NegativeDensity { value: f64, x: f64 },

    #[error("eigendecomposition backend failure: {0}")]
    Backend(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Backend(e.to_string())
    }
}
