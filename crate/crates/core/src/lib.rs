//! Cost-aware action scaling for safe off-policy reinforcement learning.
//!
//! A reward-maximizing task agent (SAC or TD3) proposes raw actions; twin cost
//! critics predict the discounted constraint cost of each proposal; and a
//! regulator network attenuates the action element-wise by a factor in (0,1)
//! before it reaches the environment. The executed, scaled action is the only
//! action ever stored or learned from, which is what makes the scheme a clean
//! fit for off-policy replay.
//!
//! The crate is `no_std`-compatible (`default-features = false`); all float
//! math routes through `libm` so both builds compute identically. Everything
//! here is pure computation over explicitly passed state — file formats, CLI,
//! and run directories live in the companion `costreg` crate.
//!
//! Module map:
//! - [`nn`]: dense networks with manual backprop, Adam, Polyak averaging, and
//!   a finite-difference gradient oracle.
//! - [`env`]: velocity-constrained point mass and an exothermic CSTR, both
//!   with separate reward/cost channels, plus a Gaussian noise wrapper.
//! - [`agent`]: replay buffer and the SAC/TD3 task agents.
//! - [`safety`]: twin cost critics and the regulator with its barrier loss.
//! - [`train`]: the interaction/update loop, metrics, and evaluation.
//! - [`checkpoint`]: the self-describing binary checkpoint container.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod agent;
pub mod checkpoint;
pub mod env;
mod math;
pub mod nn;
pub mod rng;
pub mod safety;
pub mod train;

use alloc::string::String;

/// Crate-wide error type.
///
/// The variants mirror how the CLI maps failures to exit codes: configuration
/// problems, numeric faults during training, malformed or version-mismatched
/// checkpoints, and internal invariant breakage.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint version mismatch: found {found}, supported {supported}")]
    CheckpointVersion { found: u32, supported: u32 },
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = core::result::Result<T, Error>;
