//! Multithreaded execution over lock-free shared memory.

mod run;
mod state;

pub use run::{
    measure_speedup, run_engine, run_sync_engine, EngineConfig, ExecMode, SpeedupRow, STALENESS_BUCKETS,
};
pub use state::{atomic_add, atomic_block_commit, AuxView, BlockScheme, SharedState, XView};
