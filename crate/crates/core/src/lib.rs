//! Cluster-aware wireless federated learning at desk scale.
//!
//! The crate simulates hierarchical FL over a modeled wireless uplink:
//! devices are grouped by communication quality and data distribution
//! (dual-segment affinity propagation), clusters above a contribution
//! threshold run multiple local passes per global round (CAMU), leaders
//! upload over a noisy channel, and the resulting convergence behavior is
//! checked against an analytic bound. Per-cluster transmit power and extra
//! local passes are jointly optimized against that bound with a
//! from-scratch PPO implementation.
//!
//! Everything is deterministic given a master seed.

pub mod bound;
pub mod channel;
pub mod cluster;
pub mod compare;
pub mod config;
pub mod data;
pub mod error;
pub mod fl;
pub mod manifest;
pub mod model;
pub mod plot;
pub mod ppo;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
