//! Anisotropy-based robust filtering for linear discrete time-invariant plants.
//!
//! The crate synthesizes the one-parameter family of estimators that
//! minimize the worst-case error-to-noise RMS ratio over disturbances of
//! bounded mean anisotropy `a`. At `a = 0` the estimator is the steady-state
//! Kalman filter; as `a` grows it approaches the H∞-optimal estimator.
//!
//! Modules:
//! - [`statespace`]: realizations, frequency responses, Lyapunov solver, H2/H∞ norms
//! - [`riccati`]: the worst-case noise (Q) and optimal filtering (P) Riccati maps
//! - [`anisotropy`]: mean anisotropy and the a-anisotropic norm
//! - [`synthesis`]: realization builders and the coupled-equation solver
//! - [`simulate`]: seeded Monte Carlo validation

pub mod anisotropy;
pub mod error;
pub mod linalg;
pub mod riccati;
pub mod simulate;
pub mod statespace;
pub mod synthesis;

pub use error::{Error, Result};
pub use linalg::Mat;
pub use statespace::{PlantModel, Realization};
pub use synthesis::{EstimatorGains, ShapingParams, SynthesisOptions, SynthesisSolution};
