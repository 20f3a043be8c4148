//! Ride-pooling order dispatch.
//!
//! The crate is organised bottom-up:
//!
//! - [`sim`]: discrete-time fleet simulator with per-worker rewards and
//!   episode metrics.
//! - [`routing`]: travel-time model and exact pickup-and-delivery insertion.
//! - [`assignment`]: value/probability matrices, the two bipartite matching
//!   formulations, exploration noise and action-space counting.
//! - [`nn`]: a small reverse-mode autodiff engine, Adam and gradient checking.
//! - [`policy`]: the attention policy network with factorized worker-order
//!   scoring and twin critics.
//! - [`train`]: stage-1 independent double Q-learning and stage-2 centralized
//!   TD3 fine-tuning.
//! - [`harness`]: scenarios, baselines and episode orchestration.

pub mod assignment;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod routing;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
