//! Clipped-surrogate policy gradient with generalized advantage estimation.
//!
//! The actor is a Gaussian over raw actions whose mean is a [`PolicyParams`]
//! network and whose log standard deviation is a learned, state-independent
//! vector. The critic is a separate MLP with a scalar output. Gradients are
//! exact reverse-mode sums through both networks.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::ControlTask;
use crate::error::{ensure_finite, Error, Result};
use crate::optim::rollout::{rollout_with, Actor, ActorOutput, RolloutRecord};
use crate::optim::{IterationStats, RunningNormalizer};
use crate::policy::{PolicyParams, PolicyShape};
use crate::seed;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Initial exploration standard deviation in raw (pre-squash) units.
    pub init_std: f64,
    pub episodes_per_batch: usize,
    pub value_hidden: Vec<usize>,
    pub normalize_obs: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            learning_rate: 3e-4,
            epochs: 3,
            minibatch_size: 256,
            value_coef: 0.5,
            entropy_coef: 0.0,
            init_std: 0.3,
            episodes_per_batch: 8,
            value_hidden: vec![32, 32],
            normalize_obs: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "ppo",
            &[
                self.clip,
                self.gamma,
                self.lambda,
                self.learning_rate,
                self.value_coef,
                self.entropy_coef,
                self.init_std,
            ],
        )?;
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!("ppo.clip must lie in (0, 1), got {}", self.clip)));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("ppo.gamma and ppo.lambda must lie in [0, 1]".into()));
        }
        if self.learning_rate <= 0.0 || self.init_std <= 0.0 {
            return Err(Error::Config("ppo.learning_rate and ppo.init_std must be positive".into()));
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.episodes_per_batch == 0 {
            return Err(Error::Config(
                "ppo.epochs, ppo.minibatch_size and ppo.episodes_per_batch must be at least 1".into(),
            ));
        }
        if self.value_hidden.len() != 2 {
            return Err(Error::Config("ppo.value_hidden must list two layer widths".into()));
        }
        Ok(())
    }
}

/// Advantages and returns-to-go by the backward GAE recursion.
///
/// `bootstrap` is the value estimate of the state after the last reward
/// (zero for a terminal state).
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::Shape(format!(
            "gae got {} rewards and {} values",
            rewards.len(),
            values.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let td = rewards[t] + gamma * next - values[t];
        acc = td + gamma * lambda * acc;
        adv[t] = acc;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// `min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

/// Actor, exploration noise and critic, updated together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoModel {
    pub policy: PolicyParams,
    pub log_std: Vec<f64>,
    pub value: PolicyParams,
}

impl PpoModel {
    pub fn new(policy: PolicyParams, value_hidden: [usize; 2], init_std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let shape = &policy.shape;
        let value = PolicyParams::glorot(PolicyShape::mlp(shape.input_dim, value_hidden, 1), rng)?;
        let log_std = vec![init_std.ln(); shape.output_dim];
        Ok(Self { policy, log_std, value })
    }

    pub fn len(&self) -> usize {
        self.policy.flat.len() + self.log_std.len() + self.value.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameters in the order policy, log-std, value.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(&self.policy.flat);
        v.extend(&self.log_std);
        v.extend(&self.value.flat);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        debug_assert_eq!(flat.len(), self.len());
        let (p, rest) = flat.split_at(self.policy.flat.len());
        let (s, v) = rest.split_at(self.log_std.len());
        self.policy.flat.copy_from_slice(p);
        self.log_std.copy_from_slice(s);
        self.value.flat.copy_from_slice(v);
    }

    pub fn state_value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.value.forward(obs)?[0])
    }
}

/// One transition prepared for the update.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub value_target: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Losses {
    /// Negated mean clipped surrogate.
    pub policy: f64,
    /// Mean squared value error.
    pub value: f64,
    /// Mean Gaussian entropy.
    pub entropy: f64,
    /// `policy + value_coef·value − entropy_coef·entropy`.
    pub total: f64,
    /// Fraction of samples whose ratio was clipped.
    pub clip_fraction: f64,
}

/// Minibatch loss and its gradient with respect to [`PpoModel::to_flat`].
pub fn loss_and_grad(model: &PpoModel, batch: &[Sample], cfg: &PpoConfig) -> Result<(Losses, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("ppo update needs a nonempty batch".into()));
    }
    let n = batch.len() as f64;
    let np = model.policy.flat.len();
    let ns = model.log_std.len();
    let mut grad = vec![0.0; model.len()];
    let (gp, rest) = grad.split_at_mut(np);
    let (gs, gv) = rest.split_at_mut(ns);
    let inv_std: Vec<f64> = model.log_std.iter().map(|l| (-l).exp()).collect();

    let mut losses = Losses::default();
    let mut clipped = 0usize;
    for s in batch {
        let (mean, cache) = model.policy.forward_cached(&s.obs)?;
        let log_prob = gaussian_log_prob(&s.action, &mean, &model.log_std);
        let ratio = (log_prob - s.old_log_prob).exp();
        let a = s.advantage;
        losses.policy -= clipped_surrogate(ratio, a, cfg.clip) / n;
        let outside = (a >= 0.0 && ratio > 1.0 + cfg.clip) || (a < 0.0 && ratio < 1.0 - cfg.clip);
        if outside {
            clipped += 1;
        } else {
            // d(−ρA)/d log π = −ρA
            let g = -ratio * a / n;
            let mut grad_mean = vec![0.0; mean.len()];
            for j in 0..mean.len() {
                let z = (s.action[j] - mean[j]) * inv_std[j];
                grad_mean[j] = g * z * inv_std[j];
                gs[j] += g * (z * z - 1.0);
            }
            model.policy.backward(&cache, &grad_mean, gp);
        }

        let (v, vcache) = model.value.forward_cached(&s.obs)?;
        let err = v[0] - s.value_target;
        losses.value += err * err / n;
        model.value.backward(&vcache, &[cfg.value_coef * 2.0 * err / n], gv);
    }
    // entropy of a diagonal Gaussian: Σ log σ + d/2 (1 + ln 2π)
    let d = model.log_std.len() as f64;
    losses.entropy = model.log_std.iter().sum::<f64>() + 0.5 * d * (1.0 + LN_2PI);
    for g in gs.iter_mut() {
        *g -= cfg.entropy_coef;
    }
    losses.total = losses.policy + cfg.value_coef * losses.value - cfg.entropy_coef * losses.entropy;
    losses.clip_fraction = clipped as f64 / n;
    if !losses.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Rejected(format!(
            "non-finite ppo loss (policy {}, value {}, entropy {})",
            losses.policy, losses.value, losses.entropy
        )));
    }
    Ok((losses, grad))
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// Descend along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

/// Gaussian sampling actor used while collecting a batch.
pub struct StochasticActor<'a> {
    pub model: &'a PpoModel,
    pub rng: ChaCha8Rng,
}

impl Actor for StochasticActor<'_> {
    fn act(&mut self, obs: &[f64]) -> Result<ActorOutput> {
        let mean = self.model.policy.forward(obs)?;
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.model.log_std)
            .map(|(m, ls)| {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                m + ls.exp() * e
            })
            .collect();
        let log_prob = gaussian_log_prob(&action, &mean, &self.model.log_std);
        Ok(ActorOutput {
            action,
            value: Some(self.model.state_value(obs)?),
            log_prob: Some(log_prob),
        })
    }
}

/// Turn finished episodes into update samples. Episode ends are treated as
/// terminal.
pub fn build_samples(records: &[RolloutRecord], cfg: &PpoConfig) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for rec in records {
        if rec.values.len() != rec.length || rec.log_probs.len() != rec.length {
            return Err(Error::Shape("ppo rollout is missing values or log-probabilities".into()));
        }
        let (adv, ret) = gae(&rec.rewards, &rec.values, 0.0, cfg.gamma, cfg.lambda)?;
        for t in 0..rec.length {
            samples.push(Sample {
                obs: rec.observations[t].clone(),
                action: rec.actions[t].clone(),
                old_log_prob: rec.log_probs[t],
                advantage: adv[t],
                value_target: ret[t],
            });
        }
    }
    normalize_advantages(&mut samples);
    Ok(samples)
}

/// Shift and scale advantages to zero mean and unit variance.
pub fn normalize_advantages(samples: &mut [Sample]) {
    if samples.is_empty() {
        return;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.advantage - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    for s in samples {
        s.advantage = (s.advantage - mean) * scale;
    }
}

/// Optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Ppo {
    pub cfg: PpoConfig,
    pub model: PpoModel,
    pub adam: Adam,
    pub normalizer: RunningNormalizer,
    pub last_losses: Losses,
    master_seed: u64,
    iteration: u64,
    total_rollouts: u64,
    total_env_steps: u64,
}

impl Ppo {
    pub fn new(cfg: PpoConfig, policy: PolicyParams, master_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::stream(master_seed, "ppo-value-init", &[]);
        let hidden = [cfg.value_hidden[0], cfg.value_hidden[1]];
        let obs_dim = policy.shape.input_dim;
        let model = PpoModel::new(policy, hidden, cfg.init_std, &mut rng)?;
        let adam = Adam::new(model.len(), cfg.learning_rate);
        Ok(Self {
            cfg,
            model,
            adam,
            normalizer: RunningNormalizer::new(obs_dim),
            last_losses: Losses::default(),
            master_seed,
            iteration: 0,
            total_rollouts: 0,
            total_env_steps: 0,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn total_rollouts(&self) -> u64 {
        self.total_rollouts
    }

    pub fn total_env_steps(&self) -> u64 {
        self.total_env_steps
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.model.policy
    }

    pub fn active_normalizer(&self) -> Option<&RunningNormalizer> {
        self.cfg.normalize_obs.then_some(&self.normalizer)
    }

    /// Apply `epochs` passes of shuffled minibatch Adam steps to `samples`.
    pub fn update(&mut self, samples: &[Sample]) -> Result<Losses> {
        if samples.is_empty() {
            return Err(Error::Config("ppo update needs a nonempty batch".into()));
        }
        let mut flat = self.model.to_flat();
        let mut trial = self.model.clone();
        let mut adam = self.adam.clone();
        let mut last = Losses::default();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for epoch in 0..self.cfg.epochs {
            let mut rng = seed::stream(self.master_seed, "ppo-shuffle", &[self.iteration, epoch as u64]);
            order.shuffle(&mut rng);
            for chunk in order.chunks(self.cfg.minibatch_size) {
                let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
                let (losses, grad) = loss_and_grad(&trial, &batch, &self.cfg)?;
                adam.step(&mut flat, &grad);
                trial.set_flat(&flat);
                last = losses;
            }
        }
        ensure_finite("ppo parameters", &flat)?;
        self.model = trial;
        self.adam = adam;
        self.last_losses = last;
        Ok(last)
    }

    /// Collect one batch of episodes with `make_task` and update on it.
    pub fn iterate<F>(&mut self, pool: Option<&rayon::ThreadPool>, make_task: F) -> Result<IterationStats>
    where
        F: Fn() -> Result<Box<dyn ControlTask>> + Sync,
    {
        let episodes = self.cfg.episodes_per_batch;
        let norm = self.active_normalizer().cloned();
        let model = &self.model;
        let (master, iteration) = (self.master_seed, self.iteration);
        let run = |e: usize| -> Result<RolloutRecord> {
            let mut task = make_task()?;
            let mut actor = StochasticActor {
                model,
                rng: seed::stream(master, "ppo-action", &[iteration, e as u64]),
            };
            let env_seed = seed::derive(master, "ppo-rollout", &[iteration, e as u64]);
            rollout_with(task.as_mut(), &mut actor, norm.as_ref(), env_seed, &mut |_| {})
        };
        let records: Vec<Result<RolloutRecord>> = match pool {
            Some(pool) => pool.install(|| (0..episodes).into_par_iter().map(run).collect()),
            None => (0..episodes).map(run).collect(),
        };
        let records = records.into_iter().collect::<Result<Vec<_>>>()?;
        let samples = build_samples(&records, &self.cfg)?;
        self.update(&samples)?;

        if self.cfg.normalize_obs {
            for r in &records {
                self.normalizer.merge(&r.observation_stats(self.normalizer.dim()));
            }
        }
        let returns: Vec<f64> = records.iter().map(|r| r.episode_return).collect();
        self.iteration += 1;
        self.total_rollouts += records.len() as u64;
        self.total_env_steps += records.iter().map(|r| r.length as u64).sum::<u64>();
        Ok(IterationStats::from_returns(
            self.iteration,
            self.total_rollouts,
            self.total_env_steps,
            &returns,
        ))
    }
}
