//! Goal-conditioned RL laboratory: sparse-reward environments, policies with
//! exact log-probability gradients, hindsight replay, an EM-style trainer
//! with on-policy and Q-learning baselines, and an estimator lab that checks
//! the variance analysis of hindsight relabeling against exact enumeration.

// Index loops mirror the math throughout the numeric code.
#![allow(clippy::needless_range_loop)]

pub mod algo;
pub mod config;
pub mod env;
pub mod error;
pub mod estlab;
pub mod nn;
pub mod policy;
pub mod replay;
pub mod rng;
pub mod runner;

pub use env::{Action, GoalEnv, Trajectory};
pub use error::{Error, Result};
pub use policy::{ExploreCfg, Policy};
pub use replay::{ReplayBuffer, RewardMode};
