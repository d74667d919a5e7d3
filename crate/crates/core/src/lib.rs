//! Concentrated-liquidity market making as a reinforcement-learning problem.
//!
//! The crate is layered bottom-up:
//!
//! - [`amm`]: tick arithmetic, range reserves, position value, impermanent loss,
//!   fee accrual and loss-versus-rebalancing for a single LP position.
//! - [`indicators`]: the technical features fed to the agent.
//! - [`data`]: hourly candle ingestion, trade resampling and a GBM generator.
//! - [`env`]: the hourly LP environment (observation, width actions, fee − LVR − gas reward).
//! - [`ppo`]: a small from-scratch actor-critic PPO for discrete actions.
//! - [`harness`]: rolling train/test windows, random hyperparameter search and reports.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amm;
pub mod data;
pub mod env;
pub mod error;
pub mod harness;
pub mod indicators;
pub mod numeric;
pub mod ppo;

pub use error::{Error, Result};
