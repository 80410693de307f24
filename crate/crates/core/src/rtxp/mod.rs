//! Real-time X-layer protocol: timing and the event-driven simulator.

mod sim;
mod timing;

pub use sim::*;
pub use timing::*;
