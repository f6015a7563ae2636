//! Successor-feature inverse reinforcement learning.
//!
//! The crate learns a *basis for intentions* with multi-task RL pre-training
//! (cumulants `phi`, successor features `psi`, one preference vector per task)
//! and then infers the reward of a demonstrator from reward-free trajectories
//! by behavioral cloning through `psi^T w` plus an inverse temporal-difference
//! consistency term.
//!
//! Module map:
//!
//! - [`mdp`]: exact finite MDPs, soft value iteration, closed-form successor
//!   features, policy evaluation and rollouts. These are the oracles.
//! - [`envs`]: the FruitGrid and LaneWorld multi-task environments and their
//!   export to tabular form.
//! - [`nn`]: small differentiable approximators, Adam and gradient checking.
//! - [`model`]: the cumulant / successor / preference model and its losses.
//! - [`pretrain`]: the multi-task pre-training loop and replay buffer.
//! - [`irl`]: reward inference from demonstrations.
//! - [`expert`]: demonstrators and demonstration files.
//! - [`eval`]: value difference, reward MSE, behavior distributions and the
//!   ablation grid.
//! - [`config`], [`checkpoint`], [`rng`]: run configuration, persistence and
//!   seeding.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod envs;
pub mod error;
pub mod eval;
pub mod expert;
pub mod irl;
pub mod mdp;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod plot;
pub mod pretrain;
pub mod rng;

pub use error::{Error, Result};
