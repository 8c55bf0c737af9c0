//! Discrete fractional Dirichlet energy, its operator, and the constrained
//! minimization problems built on it.

mod fft;
mod kernel;
pub(crate) mod solver;

pub use fft::Convolver;
pub use kernel::{
    apply_operator, directional_seminorm_sq, holder_seminorm, seminorm_sq, KernelTable,
    TAIL_RADIUS_FACTOR,
};
pub(crate) use kernel::check_order;
pub use solver::{
    conjugate_gradient, lanczos_smallest, minimize_lambda, minimize_rayleigh, torsion_solve,
    CgOutcome, DomainOperator, LambdaResult, LocalOperator, QuadraticOperator, RayleighOutcome,
    SolverOpts, TorsionResult,
};
