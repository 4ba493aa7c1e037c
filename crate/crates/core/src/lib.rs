//! Policies modulating trajectory generators: generators, feed-forward
//! policies, a point-mass tracking task, a planar quadruped, ARS and PPO
//! trainers, and the experiment harness around them.

pub mod env;
pub mod error;
pub mod harness;
pub mod optim;
pub mod policy;
pub mod seed;
pub mod tg;

pub use error::{Error, Result};
