//! Off-policy actor-critic learners (DDPG, TD3, SAC) with an optional
//! online-trained auxiliary actor loss, plus an experiment harness.

pub mod envs;
pub mod error;
pub mod harness;
pub mod metacritic;
pub mod nets;
pub mod offpac;
pub mod optim;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
