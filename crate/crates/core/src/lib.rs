//! Bi-directional stochastic compression for federated learning with minimal
//! random coding.
//!
//! The crate is a deterministic simulator: every random quantity comes from
//! a keyed stream in [`randomness`], so the federator and the clients can
//! regenerate each other's candidate sets and a run replays bit for bit from
//! its master seed.

pub mod bernoulli;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod learners;
pub mod mrc;
pub mod protocol;
pub mod quantizers;
pub mod randomness;
pub mod theory;

pub use error::{Error, Result};
