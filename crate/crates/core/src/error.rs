use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate radicand omega_m^2 + n nu <= 0 at mode ({n}, {m})")]
    DegenerateRadicand { n: i32, m: u32 },

    #[error("exactly resonant divisor at mode ({n}, {m})")]
    ResonantDivisor { n: i32, m: u32 },

    #[error("divisor at mode ({n}, {m}) is below the smallest admissible scale")]
    ScaleOverflow { n: i32, m: u32 },

    #[error("kernel oracle disagreement at ({m}, {m1}, {m2}): quadrature {quadrature}, exact {exact}")]
    KernelDisagreement {
        m: u32,
        m1: u32,
        m2: u32,
        quadrature: f64,
        exact: f64,
    },

    #[error("amplitude equation has no real solution on this branch (cubic coefficient A = {coefficient}); try the opposite detuning")]
    SignExcluded { coefficient: f64 },

    #[error("{what} did not converge after {iterations} iterations (last update {last_update:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        last_update: f64,
    },

    #[error("missing counterterm of order {k} at mode ({n}, {m})")]
    MissingCounterterm { k: usize, n: i32, m: u32 },

    #[error("enumeration exceeded the cap of {limit} objects")]
    CombinatorialBlowup { limit: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoConvergence { .. } => 3,
            Error::Invariant(_) | Error::KernelDisagreement { .. } => 1,
            _ => 2,
        }
    }
}
