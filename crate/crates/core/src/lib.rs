//! Fully distributed adaptive event-triggered consensus for networks of
//! identical linear agents.
//!
//! The crate covers the three protocol variants (state feedback, observer-based
//! output feedback and leader-follower), a hybrid simulator that localizes
//! every broadcast event, and post-hoc analysis of the convergence and
//! inter-event guarantees.

pub mod error;
pub mod graph;
pub mod linalg;
pub mod dynamics;
pub mod protocols;
pub mod engine;
pub mod analysis;
pub mod experiment;

pub use error::{Error, ErrorKind, Result};
