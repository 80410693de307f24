//! Simulation of real-time alarm convergecast in duty-cycled sensor networks.

pub mod analysis;
pub mod des;
pub mod error;
pub mod harness;
pub mod packet;
pub mod pedamacs;
pub mod radio;
pub mod rtxp;
pub mod scenario;
pub mod topology;
pub mod vcs;
pub mod xmac;

pub use error::{Error, Result};
