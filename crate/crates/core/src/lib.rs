//! Continual reinforcement learning with CLEAR: actor-critic training on a mix
//! of fresh and reservoir-sampled replay experience, corrected with V-Trace and
//! regularized by behavioral cloning on replayed data.
//!
//! The numerical core ([`nn`], [`vtrace`], [`losses`]) is generic over the
//! scalar type; the runtime works in `f64`.

pub mod error;
pub mod losses;
pub mod nn;
pub mod oracle;
pub mod replay;
pub mod runtime;
pub mod scalar;
pub mod tasks;
pub mod unroll;
pub mod vtrace;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Network = nn::NetworkParams<f64>;
pub type Network32 = nn::NetworkParams<f32>;
pub type Trace = nn::ForwardTrace<f64>;
pub type Hidden = nn::HiddenState<f64>;
pub type Optimizer = nn::RmsProp<f64>;
pub type VTrace = vtrace::VTraceResult<f64>;
