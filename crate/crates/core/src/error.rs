use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid elastic parameters: {0}")]
    InvalidParams(String),

    #[error("node index {index} out of range for {nodes} nodes")]
    NodeIndexOutOfRange { index: usize, nodes: usize },

    #[error("constraint radius must be nonnegative and finite, got {0}")]
    InvalidRadius(f64),

    #[error("perturbation {u} would make the radius of {radius} negative")]
    InvalidPerturbation { u: f64, radius: f64 },

    #[error(
        "demonstration node {node} touches an obstacle; obstacle constraints assume \
         the demonstrations avoid every obstacle"
    )]
    DemoTouchesObstacle { node: usize },

    #[error("obstacle set is empty or contains an empty point cloud")]
    EmptyObstacles,

    #[error("confidence factor must lie in [0, 1], got {0}")]
    InvalidConfidenceFactor(f64),

    #[error("no constraint with id {0}")]
    UnknownConstraint(usize),

    #[error("objective is not positive definite")]
    SingularObjective,

    #[error("constraint set is infeasible; conflicting constraints: {conflicting:?}")]
    Infeasible { conflicting: Vec<usize> },

    #[error("solver stopped without converging after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error(
        "unbounded influence: multiplier of constraint {constraint} stays above {eps_lambda} \
         up to u = {u_max}"
    )]
    UnboundedInfluence { constraint: usize, eps_lambda: f64, u_max: f64 },

    #[error("perturbation curve needs at least {needed} feasible samples, has {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("u = {u} lies outside [{lower}, {upper}]")]
    OutOfRange { u: f64, lower: f64, upper: f64 },
}
