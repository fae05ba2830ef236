//! Day-to-day point-queue bottleneck traffic simulation with distributed
//! deep-reinforcement-learning congestion pricing.
//!
//! The crate is layered bottom-up: [`net_model`] describes a scenario,
//! [`within_day`] plays one day, [`day_to_day`] evolves traveller choices
//! across days, [`neural`] and [`ddpg`] provide the learner, [`controller`]
//! prices every (bottleneck, slot) pair with it, [`baselines`] holds the
//! comparison controllers and [`harness`] wires experiments together.

pub mod baselines;
pub mod controller;
pub mod day_to_day;
pub mod ddpg;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod net_model;
pub mod neural;
pub mod within_day;

pub use error::{Error, Result};
pub use net_model::{BehaviorParams, Bottleneck, Network, OdPair, Route};
