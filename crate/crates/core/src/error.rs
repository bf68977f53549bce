use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite: leading minor {minor} has non-positive pivot")]
    NotPositiveDefinite { minor: usize },

    #[error("matrix is not symmetric (relative asymmetry {rel:.3e})")]
    Asymmetric { rel: f64 },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("box has zero volume along axis {axis} (lower {lower}, upper {upper})")]
    DegenerateBox { axis: usize, lower: f64, upper: f64 },

    #[error("too few Monte-Carlo samples: {found} (need at least {needed})")]
    TooFewSamples { needed: usize, found: usize },

    #[error("{n} players exceeds the exact-enumeration limit of {max}; use shapley_mc instead")]
    TooManyPlayers { n: usize, max: usize },

    #[error("invalid player index {index} for a game of {n} players")]
    InvalidPlayer { index: usize, n: usize },

    #[error("characteristic function length {len} is not 2^n for n <= {max}")]
    InvalidGameSize { len: usize, max: usize },

    #[error("joint Fisher information of coalition {coalition:#b} is singular: {reason}")]
    SingularCoalition { coalition: u32, reason: String },

    #[error("model with unknown noise requires a plug-in noise estimate")]
    MissingNoiseEstimate,

    #[error("insufficient data: need at least {needed}, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("design Gram matrix is rank deficient (rank {rank} of {dim})")]
    RankDeficient { rank: usize, dim: usize },

    #[error("datum does not match its model: {0}")]
    InvalidDatum(String),

    #[error("player {player} data source exhausted at iteration {iteration}")]
    SourceExhausted { player: usize, iteration: usize },

    #[error("player {player} Fisher estimate is singular at iteration {iteration}; raise the initial count (currently {count})")]
    SingularFisher { player: usize, iteration: usize, count: usize },

    #[error("delta series of length {len} is shorter than burn-in plus window ({needed})")]
    SeriesTooShort { len: usize, needed: usize },

    #[error("column {column} has no observed entries")]
    AllMissingColumn { column: String },

    #[error("feature table: {0}")]
    Table(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
