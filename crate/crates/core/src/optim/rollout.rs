//! Episode execution shared by the optimizers and evaluation.

use crate::env::{ControlTask, EpisodeSummary};
use crate::error::{ensure_finite, Error, Result};
use crate::optim::RunningNormalizer;
use crate::policy::PolicyParams;

/// Upper bound on episode length; protects against environments that never
/// report `done`.
pub const MAX_EPISODE_STEPS: usize = 1_000_000;

/// What an actor returns for one observation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActorOutput {
    pub action: Vec<f64>,
    /// Critic estimate, when the actor has one.
    pub value: Option<f64>,
    /// Log-density of `action` under a stochastic actor.
    pub log_prob: Option<f64>,
}

/// Maps a (normalized) observation to a raw action.
pub trait Actor {
    fn act(&mut self, obs: &[f64]) -> Result<ActorOutput>;
}

/// Deterministic feed-forward policy.
#[derive(Clone, Copy, Debug)]
pub struct GreedyActor<'a> {
    pub params: &'a PolicyParams,
}

impl Actor for GreedyActor<'_> {
    fn act(&mut self, obs: &[f64]) -> Result<ActorOutput> {
        Ok(ActorOutput {
            action: self.params.forward(obs)?,
            ..ActorOutput::default()
        })
    }
}

/// One finished episode.
///
/// `observations` holds the normalized inputs the actor saw. `raw_observations`
/// keeps the environment's values so normalizer statistics can be updated
/// afterwards.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutRecord {
    pub observations: Vec<Vec<f64>>,
    pub raw_observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub episode_return: f64,
    pub length: usize,
    pub seed: u64,
    pub summary: EpisodeSummary,
}

impl RolloutRecord {
    /// Normalizer statistics of the raw observations in this episode.
    pub fn observation_stats(&self, dim: usize) -> RunningNormalizer {
        let mut stats = RunningNormalizer::new(dim);
        for o in &self.raw_observations {
            stats.update(o);
        }
        stats
    }
}

/// Run one episode from `reset(seed)` until the task reports `done`.
///
/// `on_step` is called after every environment step, which is how traces are
/// recorded without the rollout knowing about them.
pub fn rollout_with(
    task: &mut dyn ControlTask,
    actor: &mut dyn Actor,
    normalizer: Option<&RunningNormalizer>,
    seed: u64,
    on_step: &mut dyn FnMut(&dyn ControlTask),
) -> Result<RolloutRecord> {
    let mut rec = RolloutRecord {
        seed,
        ..RolloutRecord::default()
    };
    let mut raw_obs = task.reset(seed)?;
    loop {
        let obs = match normalizer {
            Some(n) => n.apply(&raw_obs),
            None => raw_obs.clone(),
        };
        let out = actor.act(&obs)?;
        let (next, step) = task.step(&out.action)?;
        ensure_finite("reward", &[step.reward])?;
        rec.observations.push(obs);
        rec.raw_observations.push(raw_obs);
        rec.actions.push(out.action);
        if let Some(v) = out.value {
            rec.values.push(v);
        }
        if let Some(lp) = out.log_prob {
            rec.log_probs.push(lp);
        }
        rec.rewards.push(step.reward);
        rec.episode_return += step.reward;
        rec.length += 1;
        on_step(&*task);
        if step.done {
            break;
        }
        if rec.length >= MAX_EPISODE_STEPS {
            return Err(Error::Simulation {
                time: rec.length as f64,
                reason: format!("episode exceeded {MAX_EPISODE_STEPS} steps without terminating"),
            });
        }
        raw_obs = next;
    }
    rec.summary = task.summary();
    Ok(rec)
}

/// [`rollout_with`] for a deterministic policy and no per-step hook.
pub fn rollout(
    task: &mut dyn ControlTask,
    params: &PolicyParams,
    normalizer: Option<&RunningNormalizer>,
    seed: u64,
) -> Result<RolloutRecord> {
    rollout_with(task, &mut GreedyActor { params }, normalizer, seed, &mut |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::pointmass::{pm_target, PointMassConfig, PointMassTask};
    use crate::env::Wiring;
    use crate::policy::PolicyShape;

    fn pm_task() -> PointMassTask {
        PointMassTask::new(PointMassConfig::default(), Wiring::Pmtg).unwrap()
    }

    #[test]
    fn zero_policy_matches_direct_summation() {
        // With zero feedback and midpoint amplitudes the point sits on the
        // undeformed curve, so the return is the summed distance to the
        // deformed target, computed here independently.
        let cfg = PointMassConfig::default();
        let mut task = pm_task();
        let shape = PolicyShape::linear(task.obs_dim(), task.action_dim());
        let params = PolicyParams::zeros(shape).unwrap();
        let rec = rollout(&mut task, &params, None, 3).unwrap();

        let curve = cfg.curve();
        let mut oracle = 0.0;
        for k in 0..cfg.episode_len {
            let phase = std::f64::consts::TAU * (k % cfg.period) as f64 / cfg.period as f64;
            let (x, y) = (phase.sin(), 0.5 * phase.sin() * phase.cos());
            let (tx, ty) = pm_target(k, &curve);
            oracle -= ((x - tx).powi(2) + (y - ty).powi(2)).sqrt();
        }
        assert_eq!(rec.length, cfg.episode_len);
        approx::assert_abs_diff_eq!(rec.episode_return, oracle, epsilon = 1e-9);
    }

    #[test]
    fn return_is_sum_of_rewards_and_sequences_align() {
        let mut task = pm_task();
        let shape = PolicyShape::linear(task.obs_dim(), task.action_dim());
        let mut rng = crate::seed::rng(1);
        let params = PolicyParams::glorot(shape, &mut rng).unwrap();
        let rec = rollout(&mut task, &params, None, 9).unwrap();
        assert_eq!(rec.episode_return, rec.rewards.iter().sum::<f64>());
        assert_eq!(rec.observations.len(), rec.length);
        assert_eq!(rec.actions.len(), rec.length);
        assert_eq!(rec.rewards.len(), rec.length);
        assert!(rec.values.is_empty() && rec.log_probs.is_empty());
    }

    #[test]
    fn rollout_is_deterministic() {
        let shape = PolicyShape::linear(4, 4);
        let mut rng = crate::seed::rng(2);
        let params = PolicyParams::glorot(shape, &mut rng).unwrap();
        let a = rollout(&mut pm_task(), &params, None, 17).unwrap();
        let b = rollout(&mut pm_task(), &params, None, 17).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normalizer_is_applied_to_actor_inputs() {
        let mut task = pm_task();
        let params = PolicyParams::zeros(PolicyShape::linear(4, 4)).unwrap();
        let mut norm = RunningNormalizer::new(4);
        norm.update(&[1.0, 1.0, 1.0, 1.0]);
        norm.update(&[-1.0, -1.0, 3.0, 3.0]);
        let rec = rollout(&mut task, &params, Some(&norm), 0).unwrap();
        assert_eq!(rec.observations[0], norm.apply(&rec.raw_observations[0]));
    }
}
