//! Event-exact SRPT simulation.
//!
//! Runs consume a pre-generated [`ArrivalStream`], so truncated systems and
//! intertwined pairs can be fed the very same jobs.

mod engine;
mod initial;
mod intertwine;
mod job;
mod trajectory;

pub use engine::{
    coupled_truncated_runs, generate_external, run_srpt, simulate_srpt, stream_for_seed, ArrivalStream,
};
pub use initial::{generate_initial, InitialConditionSpec, INITIAL_STREAM_FAMILY};
pub use intertwine::{
    classify_pair, intertwined_pair_sim, intertwined_with_tolerance, is_intertwined, pair_queue_lengths,
    random_intertwined_start, Intertwining, PairedQueueLengths,
};
pub use job::{Job, Origin, QueueState};
pub use trajectory::{Event, EventKind, Replay, Trajectory, TrajectoryStats};
