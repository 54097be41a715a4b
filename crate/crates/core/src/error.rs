use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("resolution error: partition count {k} exceeds cap {cap}; lower R or raise the cap")]
    Resolution { k: usize, cap: usize },

    #[error(
        "near-pole: I - zL is numerically singular at mu={mu}, z={z} (refine k or shrink |z|)"
    )]
    NearPole { mu: String, z: String },

    #[error("derivative unreliable at {at}: Cauchy-Riemann mismatch {mismatch:.3e}")]
    DerivativeUnreliable { at: String, mismatch: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("audit inconclusive: {0}")]
    AuditInconclusive(String),

    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("degenerate orbit: {0}")]
    DegenerateOrbit(String),

    #[error("incomplete input: {0}")]
    IncompleteInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
