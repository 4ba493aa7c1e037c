//! Training algorithms and the rollout executor they share.

pub mod ars;
pub mod normalizer;
pub mod ppo;
pub mod rollout;

pub use ars::{Ars, ArsConfig, Evaluation};
pub use normalizer::RunningNormalizer;
pub use ppo::{Ppo, PpoConfig};
pub use rollout::{rollout, rollout_with, Actor, ActorOutput, GreedyActor, RolloutRecord};

/// Summary of one optimizer iteration, one learning-curve row.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    /// 1-based count of completed iterations.
    pub iteration: u64,
    pub total_rollouts: u64,
    pub total_env_steps: u64,
    pub mean_return: f64,
    pub max_return: f64,
    pub min_return: f64,
}

impl IterationStats {
    pub fn from_returns(iteration: u64, total_rollouts: u64, total_env_steps: u64, returns: &[f64]) -> Self {
        let n = returns.len().max(1) as f64;
        Self {
            iteration,
            total_rollouts,
            total_env_steps,
            mean_return: returns.iter().sum::<f64>() / n,
            max_return: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min_return: returns.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}
