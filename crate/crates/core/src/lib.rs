//! Finite-volume laboratory for quasiperiodic Schrödinger operators
//! `eps * Laplacian + f(x + omega . n)` with Maryland-type sampling functions
//! that have flat pieces.
//!
//! The crate builds the operators, expands isolated eigenvalues in
//! Rayleigh-Schrödinger series, diagonalizes finite blocks along the homotopy
//! `f + t * frac(y - 1/2)`, assembles the covariant moving-block conjugation,
//! and measures the resulting scaling laws (derivative floors, IDS spikes,
//! eigenvector decay).

pub mod analysis;
pub mod blockdiag;
pub mod error;
pub mod fit;
pub mod lattice;
pub mod linalg;
pub mod manifest;
pub mod movingblock;
pub mod operator;
pub mod perturbation;
pub mod sampling;

pub use error::{Error, Result};
pub use lattice::{LatticeBox, Site};
pub use operator::FiniteOperator;
pub use sampling::{FrequencyVector, SamplingFunction};
