//! Actor-learner runtime: actors produce (new, replay) unroll pairs, a single
//! learner trains on batches of them and publishes weights.

mod actor;
mod board;
mod engine;
mod learner;
mod schedule;

pub use actor::{run_episode, stream_rng, Actor, UnrollPair, ACTOR_STREAM_BASE};
pub use board::{Snapshot, WeightsBoard};
pub use engine::{run_synchronous, run_threaded, Progress, RunSetup, RuntimeConfig, RuntimeCounters};
pub use learner::{BatchStats, Learner, LearnerConfig, PairView};
pub use schedule::{Claim, Scheduler, Segment, SegmentBudget};
