//! Asynchronous parallel coordinate updates for fixed-point problems `x = Tx`
//! with nonexpansive `T`.
//!
//! The crate is organised around one abstraction, [`ProblemOperator`], which
//! exposes `S = I - T` block by block. Everything else drives it:
//!
//! * [`fixpoint`] holds the update rules and the step-size / metric calculators.
//! * [`sim`] replays the asynchronous execution model deterministically, with an
//!   explicit delay policy, so the convergence inequalities can be checked.
//! * [`engine`] runs the same update rule on real threads over lock-free shared
//!   memory.
//! * [`operators`] provides concrete operators (Jacobi, gradient, forward-backward,
//!   Peaceman-Rachford feasibility, dual ADMM and its consensus/decentralized forms).
//! * [`data`] reads LIBSVM files and generates reproducible fixtures.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod engine;
mod error;
pub mod fixpoint;
pub mod linalg;
pub mod metrics;
pub mod operators;
pub mod sim;

pub use error::{Error, Result};
pub use fixpoint::{BlockLayout, ProblemOperator, SamplingDistribution, StateView};
pub use metrics::{CommitRecord, MetricRow, RunMetrics, RunSummary};
