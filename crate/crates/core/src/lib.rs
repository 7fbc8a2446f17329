//! Decentralized learning with weighted power-p mean aggregation.
//!
//! Devices on a time-varying graph mix their models with a power mean
//! `(sum_j a_ij w_j^p)^(1/p)` and take mirror-descent steps in the matching
//! dual space. `p = 1` is ordinary gossip SGD.

pub mod data;
pub mod error;
pub mod learners;
pub mod power;
pub mod simulator;
pub mod topology;

pub use error::{DataError, LearnerError, PowerError, SimError, TopologyError};
pub use power::{ModelVector, PowerConfig};
