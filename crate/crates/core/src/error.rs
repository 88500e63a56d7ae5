use thiserror::Error;

/// Errors surfaced by the simulation and analysis routines.
///
/// Contract violations are reported, never silently patched: a failed
/// family selection or an infeasible tolerance names the offending
/// object so that callers can retry with different inputs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("node budget exceeded: tree would grow past {cap} nodes")]
    NodeBudget { cap: u64 },

    #[error("node at depth {depth} has no child walk (tree built to depth {max_depth})")]
    DepthExhausted { depth: u32, max_depth: u32 },

    #[error("tree depth {depth} is insufficient for classification to n_max = {n_max}")]
    InsufficientDepth { depth: u32, n_max: u32 },

    #[error("height {m} is outside the admissible band for K = {k}")]
    HeightOutOfBand { m: i64, k: u32 },

    #[error(
        "family selection failed at scale {scale}, box level {level}, height {height}: \
         {available} certified children available, {needed} needed"
    )]
    SelectionFailure {
        scale: u32,
        level: i64,
        height: i64,
        available: usize,
        needed: usize,
    },

    #[error("rejection sampling gave up after {attempts} attempts (good-walk probability too small)")]
    RejectionBudget { attempts: u64 },

    #[error("tolerance {tol} unachievable at family depth {depth}")]
    ToleranceUnachievable { tol: f64, depth: u32 },

    #[error("path never reaches the target level within {steps} steps")]
    TargetNotReached { steps: u64 },

    #[error("empty path")]
    EmptyPath,

    #[error("no feasible routing level found within the budget: {0}")]
    RoutingInfeasible(String),

    #[error("serialization: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
