use thiserror::Error;

/// Everything that can go wrong while building spaces, evolving heat or
/// solving transport problems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("the edge graph is not connected ({0})")]
    DisconnectedGraph(&'static str),

    #[error("measure weight at point {index} is not strictly positive ({value})")]
    NonpositiveWeight { index: usize, value: f64 },

    #[error("edge ({i}, {j}) has invalid length {length}")]
    InvalidEdgeLength { i: usize, j: usize, length: f64 },

    #[error("edge ({i}, {j}) has invalid conductance {conductance}")]
    InvalidConductance { i: usize, j: usize, conductance: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("problem size {n} exceeds the limit of {max}")]
    TooLarge { n: usize, max: usize },

    #[error("time must be non-negative and finite, got {0}")]
    InvalidTime(f64),

    #[error("kernel series not converged: {0}")]
    SeriesNotConverged(String),

    #[error("symmetric eigendecomposition failed to converge")]
    EigenFailure,

    #[error("marginals carry different mass ({source_mass} vs {target_mass})")]
    MassMismatch { source_mass: f64, target_mass: f64 },

    #[error("negative mass {value} at index {index}")]
    NegativeMass { index: usize, value: f64 },

    #[error("transport solver failure: {0}")]
    SolverFailure(String),

    #[error("sinkhorn did not reach the marginal tolerance after {iterations} iterations (violation {violation:e})")]
    SinkhornNotConverged { iterations: usize, violation: f64 },

    #[error("potentials violate the c-inequality by {0:e}")]
    InfeasiblePotentials(f64),

    #[error("no curvature lower bound declared for this space")]
    MissingCurvatureBound,

    #[error("source term has nonzero mean {0:e}")]
    NonzeroMeanSource(f64),

    #[error("density is not strictly positive on the grid")]
    NonpositiveDensity,

    #[error("linear solver failed: {0}")]
    LinearSolverBreakdown(String),

    #[error("grid too coarse for t = {t}: need t >= {required}")]
    UnresolvedTime { t: f64, required: f64 },

    #[error("curve has no samples")]
    EmptyCurve,

    #[error("probe position {0} is not a grid node on every grid")]
    ProbeNotRepresentable(f64),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidTime(t))
    }
}
