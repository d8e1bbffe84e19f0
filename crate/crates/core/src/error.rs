use thiserror::Error;

/// Errors raised by the operator, frame and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("phase {phase} is within 1e-12 of a pole of the sampling function{}", site_suffix(.site))]
    PoleProximity { phase: f64, site: Option<Vec<i64>> },

    #[error("invalid sampling function: {0}")]
    InvalidSampling(String),

    #[error("invalid frequency vector: {0}")]
    InvalidFrequency(String),

    #[error("frequency vector is near-rational: ||n.omega|| = {distance:e} at n = {n:?}")]
    NearRational { n: Vec<i64>, distance: f64 },

    #[error("invalid lattice box: {0}")]
    InvalidBox(String),

    #[error("block frame mismatch: {0}")]
    FrameMismatch(String),

    #[error("degenerate diagonal: |V[{i}] - V[{j}]| = {gap:e}")]
    DegenerateDiagonal { i: usize, j: usize, gap: f64 },

    #[error("branch at site index {index} is not isolated: nearest competing eigenvalue at distance {gap:e}")]
    BranchAmbiguity { index: usize, gap: f64 },

    #[error("spectral gap {gap:e} is too small")]
    GapTooSmall { gap: f64 },

    #[error("eigenvalue gap collapsed to {gap:e} at x = {x}, t = {t}")]
    GapCollapse { x: f64, t: f64, gap: f64 },

    #[error("branch continuation lost track at x = {x}, t = {t}: overlap {overlap}")]
    SignFlip { x: f64, t: f64, overlap: f64 },

    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),

    #[error("eigenvector {index} has mass {mass} < 0.5 in every cluster")]
    AssignmentAmbiguity { index: usize, mass: f64 },

    #[error("eigenvector norm {norm} on A u B is below 1")]
    NormTooSmall { norm: f64 },

    #[error("(gen2) fails: site {site:?} is singular at x = {x}")]
    Gen2Violation { x: f64, site: Vec<i64> },

    #[error("(gen3) fails: gap {gap:e} at x = {x}, t = {t}")]
    Gen3Violation { x: f64, t: f64, gap: f64 },

    #[error("separation fails at x = {x}, t = {t}: gap {gap:e} < required {required:e}")]
    SeparationViolation { x: f64, t: f64, gap: f64, required: f64 },

    #[error("(gen4) fails: copy supports {first} and {second} overlap")]
    Gen4Violation { first: String, second: String },

    #[error("f2 covariance mismatch at x = {x}, site {site:?}: readings differ by {difference:e}")]
    CovarianceMismatch { x: f64, site: Vec<i64>, difference: f64 },

    #[error("no spike found: {0}")]
    PeakNotFound(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error: {0}")]
    Io(String),
}

fn site_suffix(site: &Option<Vec<i64>>) -> String {
    match site {
        Some(s) => format!(" (site {s:?})"),
        None => String::new(),
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
