use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("field has nonzero mean (relative size {0:.3e})")]
    NonZeroMean(f64),
    #[error("field is not solenoidal (relative divergence {0:.3e})")]
    NotSolenoidal(f64),
    #[error("wavevector {k:?} does not lie on the sphere of radius {radius}")]
    BadRadius { k: [i64; 3], radius: f64 },
    #[error("zero wavevector")]
    ZeroVector,
    #[error("coefficients violate a_(-k) = conj(a_k) at k = {0:?}")]
    ConjugationViolated([i64; 3]),
    #[error("direction set has projector rank {0}, need 6")]
    RankDeficient(usize),
    #[error("invalid direction set: {0}")]
    InvalidDirectionSet(String),
    #[error("matrix lies outside the admissible ball (distance {dist:.4e} > r0 = {r0:.4e})")]
    OutsideBall { dist: f64, r0: f64 },
    #[error("flow map needs {needed} sub-steps per slice, cap is {cap}")]
    CflFailure { needed: usize, cap: usize },
    #[error("Reynolds stress at the cell anchor is degenerate (sup {0:.3e})")]
    DegenerateReynolds(f64),
    #[error("Euler-Reynolds residual {residual:.3e} exceeds {tol:.3e}: {breakdown}")]
    ResidualExceeded {
        residual: f64,
        tol: f64,
        breakdown: String,
    },
    #[error("alpha = {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("scaled pipeline mismatch {mismatch:.3e} exceeds {tol:.3e}")]
    MismatchExceeded { mismatch: f64, tol: f64 },
    #[error("cannot tune noise amplitude: {0}")]
    TuningFailure(String),
    #[error("simulation unstable: energy ratio {ratio:.3e} at t = {t:.4}")]
    Unstable { ratio: f64, t: f64 },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("malformed dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
