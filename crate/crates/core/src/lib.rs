//! Desk-scale numerics for the quantitative fractional Faber-Krahn inequality
//! on pixelated planar domains.
//!
//! Modules follow the computational pipeline: closed-form [`constants`],
//! pixelated [`domain`]s, the discrete Gagliardo seminorm and its
//! minimizers in [`nonlocal`], Schwarz [`rearrange`]ments, the
//! Poisson-kernel [`extension`] with its level-set machinery, and the
//! end-to-end checks in [`verify`].

pub mod cli;
pub mod constants;
pub mod domain;
pub mod error;
pub mod extension;
pub mod grid;
pub mod nonlocal;
pub mod quadrature;
pub mod rearrange;
pub mod report;
pub mod special;
pub mod verify;

pub use constants::{eval_constants, stability_constants, ConstantsRecord, FracParams, StabilityConstants};
pub use domain::{fraenkel_asymmetry, make_shape, Ball, GridDomain, ShapeKind, ShapeParams};
pub use error::{Error, Result};
pub use grid::{GridFunction, GridSpec};
