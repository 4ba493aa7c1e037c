//! Augmented Random Search.
//!
//! Each iteration samples `N` Gaussian directions, evaluates the policy at
//! `θ ± std·δ`, keeps the `top_b` directions ranked by `max(r⁺, r⁻)` and
//! steps along `Σ (r⁺ − r⁻) δ` scaled by `step / (b σ_r)`, where `σ_r` is
//! the standard deviation of the kept returns.
//!
//! Directions and rollout seeds are pure functions of `(master seed,
//! iteration, direction)`, and results are reduced in a canonical order, so
//! the update is the same for any worker count.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::optim::{IterationStats, RunningNormalizer};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArsConfig {
    pub step_size: f64,
    pub noise_std: f64,
    pub num_directions: usize,
    pub top_b: usize,
    pub rollouts_per_direction: usize,
    pub normalize_obs: bool,
}

impl Default for ArsConfig {
    fn default() -> Self {
        Self {
            step_size: 0.02,
            noise_std: 0.025,
            num_directions: 8,
            top_b: 4,
            rollouts_per_direction: 1,
            normalize_obs: false,
        }
    }
}

impl ArsConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("ars", &[self.step_size, self.noise_std])?;
        if self.num_directions == 0 {
            return Err(Error::Config("ars.num_directions must be at least 1".into()));
        }
        if self.top_b == 0 || self.top_b > self.num_directions {
            return Err(Error::Config(format!(
                "ars.top_b must lie in [1, {}], got {}",
                self.num_directions, self.top_b
            )));
        }
        if self.rollouts_per_direction == 0 {
            return Err(Error::Config("ars.rollouts_per_direction must be at least 1".into()));
        }
        if self.step_size <= 0.0 || self.noise_std <= 0.0 {
            return Err(Error::Config("ars.step_size and ars.noise_std must be positive".into()));
        }
        Ok(())
    }

    /// Rollouts one iteration consumes.
    pub fn rollouts_per_iteration(&self) -> usize {
        2 * self.num_directions * self.rollouts_per_direction
    }
}

/// Result of evaluating one parameter vector on one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub episode_return: f64,
    pub env_steps: usize,
    /// Raw observation statistics gathered during the episode.
    pub obs_stats: Option<RunningNormalizer>,
}

impl Evaluation {
    pub fn of_return(episode_return: f64) -> Self {
        Self {
            episode_return,
            env_steps: 0,
            obs_stats: None,
        }
    }
}

/// One sampled direction and the returns measured along it.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionResult {
    pub delta: Vec<f64>,
    pub r_plus: f64,
    pub r_minus: f64,
}

/// The parameter change for one iteration.
///
/// Directions are ranked by `max(r⁺, r⁻)` with ties broken by the returns and
/// then the direction values, so any permutation of `results` yields the same
/// bits.
pub fn ars_update(results: &[DirectionResult], step_size: f64, top_b: usize) -> Result<Vec<f64>> {
    let Some(first) = results.first() else {
        return Err(Error::Config("ars update needs at least one direction".into()));
    };
    let dim = first.delta.len();
    if results.iter().any(|r| r.delta.len() != dim) {
        return Err(Error::Shape("ars directions differ in length".into()));
    }
    for r in results {
        if !r.r_plus.is_finite() || !r.r_minus.is_finite() {
            return Err(Error::Rejected(format!(
                "non-finite return in ars iteration (r+ = {}, r- = {})",
                r.r_plus, r.r_minus
            )));
        }
    }
    let b = top_b.clamp(1, results.len());
    let mut order: Vec<&DirectionResult> = results.iter().collect();
    order.sort_by(|x, y| {
        let key = |r: &DirectionResult| r.r_plus.max(r.r_minus);
        key(y)
            .total_cmp(&key(x))
            .then(y.r_plus.total_cmp(&x.r_plus))
            .then(y.r_minus.total_cmp(&x.r_minus))
            .then_with(|| {
                x.delta
                    .iter()
                    .zip(&y.delta)
                    .map(|(a, b)| a.total_cmp(b))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    let kept = &order[..b];

    let used: Vec<f64> = kept.iter().flat_map(|r| [r.r_plus, r.r_minus]).collect();
    let mean = used.iter().sum::<f64>() / used.len() as f64;
    let var = used.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / used.len() as f64;
    let sigma = var.sqrt();
    let sigma = if sigma > 0.0 && sigma.is_finite() { sigma } else { 1.0 };

    let mut update = vec![0.0; dim];
    for r in kept {
        let w = r.r_plus - r.r_minus;
        for (u, d) in update.iter_mut().zip(&r.delta) {
            *u += w * d;
        }
    }
    let scale = step_size / (b as f64 * sigma);
    update.iter_mut().for_each(|u| *u *= scale);
    Ok(update)
}

/// Optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Ars {
    pub cfg: ArsConfig,
    pub params: Vec<f64>,
    pub normalizer: RunningNormalizer,
    master_seed: u64,
    iteration: u64,
    total_rollouts: u64,
    total_env_steps: u64,
}

impl Ars {
    pub fn new(cfg: ArsConfig, params: Vec<f64>, obs_dim: usize, master_seed: u64) -> Result<Self> {
        cfg.validate()?;
        ensure_finite("initial parameters", &params)?;
        Ok(Self {
            cfg,
            params,
            normalizer: RunningNormalizer::new(obs_dim),
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

    /// Normalizer the policy should see, or `None` when normalization is off.
    pub fn active_normalizer(&self) -> Option<&RunningNormalizer> {
        self.cfg.normalize_obs.then_some(&self.normalizer)
    }

    /// Direction `k` of the current iteration.
    pub fn direction(&self, k: usize) -> Vec<f64> {
        let mut rng = seed::stream(self.master_seed, "ars-direction", &[self.iteration, k as u64]);
        (0..self.params.len()).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Rollout seed for repeat `j` of direction `k`. Both signs share it, so
    /// `r⁺ − r⁻` is measured under identical disturbances.
    pub fn rollout_seed(&self, k: usize, j: usize) -> u64 {
        seed::derive(self.master_seed, "ars-rollout", &[self.iteration, k as u64, j as u64])
    }

    /// Run one iteration. `evaluate(params, normalizer, seed)` must be a pure
    /// function of its arguments. Evaluations run on `pool` when given and
    /// are gathered in index order.
    pub fn iterate<F>(&mut self, pool: Option<&rayon::ThreadPool>, evaluate: F) -> Result<IterationStats>
    where
        F: Fn(&[f64], Option<&RunningNormalizer>, u64) -> Result<Evaluation> + Sync,
    {
        let n = self.cfg.num_directions;
        let m = self.cfg.rollouts_per_direction;
        let std = self.cfg.noise_std;
        let directions: Vec<Vec<f64>> = (0..n).map(|k| self.direction(k)).collect();
        // job index = ((k * 2) + sign) * m + j
        let jobs: Vec<(usize, usize, usize)> = (0..n)
            .flat_map(|k| (0..2).flat_map(move |s| (0..m).map(move |j| (k, s, j))))
            .collect();
        let seeds: Vec<u64> = jobs.iter().map(|&(k, _, j)| self.rollout_seed(k, j)).collect();
        let norm = self.active_normalizer().cloned();
        let base = &self.params;
        let run = |i: usize| -> Result<Evaluation> {
            let (k, s, _) = jobs[i];
            let sign = if s == 0 { 1.0 } else { -1.0 };
            let theta: Vec<f64> = base.iter().zip(&directions[k]).map(|(p, d)| p + sign * std * d).collect();
            evaluate(&theta, norm.as_ref(), seeds[i])
        };
        let evals: Vec<Result<Evaluation>> = match pool {
            Some(pool) => pool.install(|| (0..jobs.len()).into_par_iter().map(run).collect()),
            None => (0..jobs.len()).map(run).collect(),
        };
        let evals = evals.into_iter().collect::<Result<Vec<_>>>()?;

        let mean_of = |k: usize, s: usize| {
            let from = (k * 2 + s) * m;
            evals[from..from + m].iter().map(|e| e.episode_return).sum::<f64>() / m as f64
        };
        let results: Vec<DirectionResult> = directions
            .into_iter()
            .enumerate()
            .map(|(k, delta)| DirectionResult {
                delta,
                r_plus: mean_of(k, 0),
                r_minus: mean_of(k, 1),
            })
            .collect();
        let update = ars_update(&results, self.cfg.step_size, self.cfg.top_b)?;
        let next: Vec<f64> = self.params.iter().zip(&update).map(|(p, u)| p + u).collect();
        ensure_finite("ars parameters", &next)?;
        self.params = next;

        let returns: Vec<f64> = evals.iter().map(|e| e.episode_return).collect();
        let steps: usize = evals.iter().map(|e| e.env_steps).sum();
        if self.cfg.normalize_obs {
            for e in &evals {
                if let Some(stats) = &e.obs_stats {
                    self.normalizer.merge(stats);
                }
            }
        }
        self.iteration += 1;
        self.total_rollouts += evals.len() as u64;
        self.total_env_steps += steps as u64;
        Ok(IterationStats::from_returns(
            self.iteration,
            self.total_rollouts,
            self.total_env_steps,
            &returns,
        ))
    }
}
