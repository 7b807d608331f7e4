//! Recurrent policy-value network, its gradients, and the optimizer.

mod network;
mod optim;
mod params;
mod policy;

pub use network::{ForwardTrace, OutputGrads};
pub use optim::{RmsProp, RmsPropConfig};
pub use params::{HiddenState, Layout, NetworkParams, NetworkShape};
pub use policy::sample_action;
