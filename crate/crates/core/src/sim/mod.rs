//! Deterministic replay of the asynchronous execution model.
//!
//! Each step samples a block, builds a possibly stale read `x̂ᵏ` from the
//! recent history according to a [`DelayPolicy`], and applies the coordinate
//! update. Identical configurations give bit-identical trajectories.

mod history;
pub(crate) mod run;
mod verify;

pub use history::{DelayPolicy, IterateHistory, ReadMode, ReadPlan, StepRecord};
pub use run::{run_simulation, stream_rng, sync_sweep, Read, SimConfig, Simulator, DELAY_STREAM, SAMPLER_STREAM};
pub use verify::{
    verify_fundamental_inequality, verify_linear_rate, InequalityReport, InequalityStep, LinearRateReport, RateRow,
    EXACT_ENUMERATION_LIMIT,
};
