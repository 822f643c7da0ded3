use thiserror::Error;

use crate::tree::VertexId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("branching factor must be at least 1, got {0}")]
    InvalidBranching(u64),
    #[error("depth {depth} overflows 64-bit vertex indices for K = {branching}; maximum admissible depth is {max_depth}")]
    DepthTooLarge { branching: u64, depth: u32, max_depth: u32 },
    #[error("the T_1 split needs K >= 2 (with K = 1 the subtree is the whole tree)")]
    DegenerateSplit,
    #[error("plate level n = {n} must satisfy 1 <= n < depth = {depth}")]
    PlateLevel { n: u32, depth: u32 },
    #[error("vertex {0} is outside the truncation")]
    VertexOutOfRange(VertexId),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("R_p over [{lo}, {hi}] is undefined: {reason}")]
    InvalidInterval { lo: f64, hi: f64, reason: String },
    #[error("operation needs a radial weight pair, but the config carries subtree overrides; decompose by branch instead")]
    NonRadial,
    #[error("subtree carries mixed weights: {0}")]
    MixedSubtree(String),
    #[error("profile `{profile}` is undefined at t = {t} ({reason})")]
    ProfileDomain { profile: String, t: f64, reason: String },
    #[error("quadrature on [{a}, {b}] stopped after {intervals} subintervals with relative error {achieved:e} > {requested:e}")]
    Quadrature { a: f64, b: f64, intervals: usize, achieved: f64, requested: f64 },

    #[error("invalid Dirichlet problem: {0}")]
    InvalidProblem(String),
    #[error("solver stopped after {sweeps} sweeps with residual {residual:e} > {tol:e}")]
    NotConverged { sweeps: usize, residual: f64, tol: f64, best: Box<crate::solver::PotentialField> },
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("config line {line}, column {column}, field `{field}`: {message}")]
    Config { line: usize, column: usize, field: String, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}
