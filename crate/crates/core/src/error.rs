use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RewardError {
    #[error("invalid reward parameter: {0}")]
    InvalidParameter(String),
    #[error("reward must be nondecreasing")]
    NotIncreasing,
    #[error("reward must be logconcave: {0}")]
    NotLogConcave(String),
    #[error("reward must be nonconstant")]
    Constant,
    #[error("truncation level {cap} must exceed x0 = {x0} and leave g positive")]
    InvalidTruncation { cap: f64, x0: f64 },
    #[error("closure-based rewards cannot be serialized")]
    NotSerializable,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LawError {
    #[error("invalid increment law: {0}")]
    InvalidParameter(String),
    #[error("increment law must put positive mass on (0, inf)")]
    NoUpwardMass,
    #[error("truncation destroys upward mass: {0}")]
    DegenerateLaw(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PassageError {
    #[error("expectation is unbounded: {0}")]
    UnboundedExpectation(String),
    #[error("path truncation bound {bound:.3e} exceeds 10% of the estimate {estimate:.3e}")]
    TruncationDominates { bound: f64, estimate: f64 },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("exact lattice method needs a lattice law")]
    NotLattice,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Passage(#[from] PassageError),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("level schedule too short: last iterates {prev} and {last} differ by more than {tol}")]
    ScheduleTooShort { prev: f64, last: f64, tol: f64 },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OracleError {
    #[error("value iteration needs a lattice law")]
    NotLattice,
    #[error("grid too narrow: stopping set touches the lower boundary at {0}")]
    GridTooNarrow(f64),
    #[error("value iteration refused: {0}")]
    Refused(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LevyError {
    #[error("invalid Levy model: {0}")]
    InvalidModel(String),
    #[error("threshold sequence decreases between levels {level} and {next}: {from} -> {to}")]
    MonotonicityViolated { level: u32, next: u32, from: f64, to: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Passage(#[from] PassageError),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SmoothFitError {
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("Monte Carlo noise {se:.3e} exceeds the difference signal {signal:.3e} at eps = {eps}")]
    NoiseDominates { eps: f64, se: f64, signal: f64 },
    #[error(transparent)]
    Levy(#[from] LevyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Passage(#[from] PassageError),
}
