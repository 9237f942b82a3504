use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spin index {index} out of range for {n_spins} spins")]
    SpinIndex { index: usize, n_spins: usize },
    #[error("{n_spins} spins exceeds the supported maximum of {max}")]
    TooManySpins { n_spins: usize, max: usize },
    #[error("invalid coupling table: {0}")]
    Couplings(String),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("operator is not hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("pulses about the z axis are not supported")]
    LongitudinalPulse,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("lattice: {0}")]
    Lattice(String),
    #[error("not enough occupied sites: found {found}, need {needed}")]
    NotEnoughSites { found: usize, needed: usize },
    #[error("coincident spin positions {0} and {1}")]
    CoincidentSpins(usize, usize),
    #[error("invalid sequence: {0}")]
    Sequence(String),
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        offset: usize,
        message: String,
    },
    #[error("cycle is not rf-cyclic: net rotation {angle_deg:.6} deg about ({axis_x:.6}, {axis_y:.6}, {axis_z:.6})")]
    NotCyclic {
        angle_deg: f64,
        axis_x: f64,
        axis_y: f64,
        axis_z: f64,
    },
    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("quadrature did not converge (residual {0:e})")]
    Quadrature(f64),
    #[error("realization {index}: {source}")]
    Realization {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
