//! Convex elastic-map reproduction of demonstrated trajectories, with
//! confidence estimates derived from the dual variables of the reproduction's
//! constraints.
//!
//! The pipeline is:
//!
//! 1. resample every demonstration to `N` nodes ([`trajectory`]),
//! 2. build the quadratic elastic-map energy ([`energy`]),
//! 3. add L1 point / obstacle constraints ([`constraints`]) and solve the
//!    resulting convex QP with a primal-dual interior-point method ([`qp`]),
//! 4. drop constraints whose multiplier is zero, and
//! 5. perturb individual constraints to see how the optimal value reacts
//!    ([`perturbation`]).
//!
//! [`pipeline`] strings these together; [`oracle`] is a slow, independent
//! projected-gradient solver used to cross-check the main solver.

pub mod constraints;
pub mod energy;
mod error;
pub mod oracle;
pub mod perturbation;
pub mod pipeline;
pub mod qp;
pub mod trajectory;

pub use constraints::{ConstraintKind, ObstacleSet, PointConstraint};
pub use energy::{ClusterTarget, ElasticParams, Energies, QuadraticObjective};
pub use error::{Error, Result};
pub use perturbation::{Confidence, GridSpec, PerturbationCurve, Perturber, SensitivityReport};
pub use pipeline::{Frame, Problem, Reproduction, ReproductionSettings};
pub use qp::{KktReport, LinearConstraintSystem, RowRole, Solution, SolveStatus, SolverTolerances};
pub use trajectory::{DemonstrationSet, Trajectory};
