//! Exact tabular policy mirror descent.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: finite discounted MDPs under a cost-minimisation convention, exact
//!   policy evaluation, optimal values and the optimal-action structure.
//! - [`bregman`]: Bregman generators (squared Euclidean, KL, Tsallis), simplex
//!   projection, per-state proximal steps and KKT certification of a step.
//! - [`engine`]: the synchronous PMD loop, step-size schedules, adaptive
//!   regularisation and a value-iteration baseline.
//! - [`diagnostics`]: closed-form convergence bounds and stopping predictions
//!   evaluated against recorded trajectories.
//! - [`experiment`]: config-driven experiment runner, CSV trajectories and summaries.

// `!(x > 0.0)` is used on purpose so NaN fails the guard.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bregman;
pub mod diagnostics;
pub mod engine;
mod error;
pub mod experiment;
pub mod mdp;

pub use bregman::{DivergenceKind, DivergenceSpec, KktReport};
pub use diagnostics::BoundContext;
pub use engine::{IterateRecord, Regularization, RunConfig, Schedule, ScheduleKind};
pub use error::{Error, Result};
pub use mdp::{Mdp, MismatchCoefficients, OptimalStructure, Policy, StateDistribution};
