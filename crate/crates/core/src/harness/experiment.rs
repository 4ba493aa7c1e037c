//! Training, evaluation and comparison driven by a [`RunConfig`].

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use rayon::ThreadPool;

use super::checkpoint::Checkpoint;
use super::config::{Algorithm, EnvKind, RunConfig};
use super::logs::{self, Columns, CsvLog, CurveRow, EpisodeRow, EvalRow};
use crate::env::pointmass::PointMassTask;
use crate::env::quadruped::QuadrupedTask;
use crate::env::ControlTask;
use crate::error::{Error, Result};
use crate::optim::{rollout_with, Ars, Evaluation, GreedyActor, IterationStats, Ppo, RunningNormalizer};
use crate::policy::{PolicyKind, PolicyParams, PolicyShape};
use crate::seed;

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const EPISODES_FILE: &str = "episodes.csv";

/// Why a task is being built. Evaluation disables external pushes unless
/// `run.eval_perturbations` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Train,
    Eval,
}

pub fn make_task(cfg: &RunConfig, purpose: Purpose) -> Result<Box<dyn ControlTask>> {
    Ok(match cfg.env.kind {
        EnvKind::Pointmass => Box::new(PointMassTask::new(cfg.env.pointmass.clone(), cfg.env.wiring)?),
        EnvKind::Quadruped => {
            let mut q = cfg.env.quadruped.clone();
            if purpose == Purpose::Eval && !cfg.run.eval_perturbations {
                q.task.perturbations.enabled = false;
            }
            Box::new(QuadrupedTask::new(q, cfg.tg.generator.clone(), cfg.tg.bounds, cfg.env.wiring)?)
        }
    })
}

pub fn policy_shape(cfg: &RunConfig) -> Result<PolicyShape> {
    let task = make_task(cfg, Purpose::Eval)?;
    let shape = match cfg.policy.kind {
        PolicyKind::Linear => PolicyShape {
            bias: cfg.policy.bias,
            ..PolicyShape::linear(task.obs_dim(), task.action_dim())
        },
        PolicyKind::Mlp => PolicyShape::mlp(task.obs_dim(), cfg.policy.hidden, task.action_dim()),
    };
    shape.validate()?;
    Ok(shape)
}

/// Linear policies start at zero, which is the generator alone under PMTG
/// wiring. MLPs need random weights to break symmetry.
pub fn initial_params(cfg: &RunConfig) -> Result<PolicyParams> {
    let shape = policy_shape(cfg)?;
    match shape.kind {
        PolicyKind::Linear => PolicyParams::zeros(shape),
        PolicyKind::Mlp => PolicyParams::glorot(shape, &mut seed::stream(cfg.run.seed, "policy-init", &[])),
    }
}

/// A rayon pool for `workers > 1`; `None` runs on the calling thread.
pub fn worker_pool(workers: usize) -> Result<Option<ThreadPool>> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// The configured optimizer together with its state.
#[derive(Clone, Debug)]
pub enum Trainer {
    Ars { ars: Ars, shape: PolicyShape },
    Ppo(Box<Ppo>),
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let init = initial_params(cfg)?;
        Ok(match cfg.optim.algorithm {
            Algorithm::Ars => {
                let shape = init.shape.clone();
                let ars = Ars::new(cfg.optim.ars.clone(), init.flat, shape.input_dim, cfg.run.seed)?;
                Trainer::Ars { ars, shape }
            }
            Algorithm::Ppo => Trainer::Ppo(Box::new(Ppo::new(cfg.optim.ppo.clone(), init, cfg.run.seed)?)),
        })
    }

    pub fn policy(&self) -> Result<PolicyParams> {
        match self {
            Trainer::Ars { ars, shape } => PolicyParams::from_flat(shape.clone(), ars.params.clone()),
            Trainer::Ppo(ppo) => Ok(ppo.policy().clone()),
        }
    }

    pub fn normalizer(&self) -> Option<&RunningNormalizer> {
        match self {
            Trainer::Ars { ars, .. } => ars.active_normalizer(),
            Trainer::Ppo(ppo) => ppo.active_normalizer(),
        }
    }

    pub fn iteration(&self) -> u64 {
        match self {
            Trainer::Ars { ars, .. } => ars.iteration(),
            Trainer::Ppo(ppo) => ppo.iteration(),
        }
    }

    pub fn total_rollouts(&self) -> u64 {
        match self {
            Trainer::Ars { ars, .. } => ars.total_rollouts(),
            Trainer::Ppo(ppo) => ppo.total_rollouts(),
        }
    }

    pub fn rollouts_per_iteration(&self) -> u64 {
        match self {
            Trainer::Ars { ars, .. } => ars.cfg.rollouts_per_iteration() as u64,
            Trainer::Ppo(ppo) => ppo.cfg.episodes_per_batch as u64,
        }
    }

    /// Whether another iteration fits in `max_rollouts`.
    pub fn within_budget(&self, max_rollouts: u64) -> bool {
        self.total_rollouts() + self.rollouts_per_iteration() <= max_rollouts
    }

    pub fn step(&mut self, cfg: &RunConfig, pool: Option<&ThreadPool>) -> Result<IterationStats> {
        match self {
            Trainer::Ars { ars, shape } => {
                let normalize = ars.cfg.normalize_obs;
                let evaluate = |theta: &[f64], norm: Option<&RunningNormalizer>, seed: u64| {
                    let mut task = make_task(cfg, Purpose::Train)?;
                    let params = PolicyParams::from_flat(shape.clone(), theta.to_vec())?;
                    let rec = rollout_with(task.as_mut(), &mut GreedyActor { params: &params }, norm, seed, &mut |_| {})?;
                    Ok(Evaluation {
                        episode_return: rec.episode_return,
                        env_steps: rec.length,
                        obs_stats: normalize.then(|| rec.observation_stats(task.obs_dim())),
                    })
                };
                ars.iterate(pool, evaluate)
            }
            Trainer::Ppo(ppo) => ppo.iterate(pool, || make_task(cfg, Purpose::Train)),
        }
    }

    pub fn checkpoint(&self, cfg: &RunConfig) -> Result<Checkpoint> {
        Ok(Checkpoint::new(
            self.policy()?,
            self.normalizer().cloned(),
            cfg.tg.bounds,
            cfg.run.seed,
            cfg.policy_hash()?,
            self.iteration(),
        ))
    }
}

/// Run iterations until the rollout budget is spent, calling `observe`
/// after each one.
pub fn train_with(
    cfg: &RunConfig,
    trainer: &mut Trainer,
    pool: Option<&ThreadPool>,
    mut observe: impl FnMut(&Trainer, &IterationStats) -> Result<()>,
) -> Result<()> {
    while trainer.within_budget(cfg.run.max_rollouts) {
        let stats = trainer.step(cfg, pool)?;
        observe(trainer, &stats)?;
    }
    Ok(())
}

/// Train without touching the filesystem; returns the optimizer and its
/// learning curve.
pub fn train_in_memory(cfg: &RunConfig) -> Result<(Trainer, Vec<CurveRow>)> {
    let pool = worker_pool(cfg.run.workers)?;
    let mut trainer = Trainer::new(cfg)?;
    let mut curve = Vec::new();
    train_with(cfg, &mut trainer, pool.as_ref(), |_, s| {
        curve.push(CurveRow::new(s, None));
        Ok(())
    })?;
    Ok((trainer, curve))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub seed: u64,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeRow>,
    pub mean_return: f64,
    /// Mean return divided by mean episode length.
    pub mean_reward_per_step: f64,
    /// Mean of the per-episode tracking errors, for speed-tracking tasks.
    pub mean_tracking_error: Option<f64>,
    pub fall_rate: f64,
    /// Per-step diagnostics, one per episode, when requested.
    pub traces: Vec<Trace>,
}

/// Roll out `params` deterministically on seeds `0..episodes`.
pub fn evaluate(
    cfg: &RunConfig,
    params: &PolicyParams,
    normalizer: Option<&RunningNormalizer>,
    episodes: usize,
    trace: bool,
    pool: Option<&ThreadPool>,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let run = |seed: usize| -> Result<(EpisodeRow, Option<Trace>)> {
        let mut task = make_task(cfg, Purpose::Eval)?;
        let mut rows = Vec::new();
        let rec = rollout_with(task.as_mut(), &mut GreedyActor { params }, normalizer, seed as u64, &mut |t| {
            if trace {
                rows.push(t.trace_row());
            }
        })?;
        let row = EpisodeRow {
            seed: seed as u64,
            episode_return: rec.episode_return,
            length: rec.length,
            tracking_error: rec.summary.tracking_error,
            fell: rec.summary.fell,
            duration_s: rec.summary.duration,
        };
        let trace = trace.then(|| Trace {
            seed: seed as u64,
            header: task.trace_header().to_vec(),
            rows,
        });
        Ok((row, trace))
    };
    let results: Vec<Result<_>> = match pool {
        Some(pool) => pool.install(|| (0..episodes).into_par_iter().map(run).collect()),
        None => (0..episodes).map(run).collect(),
    };
    let (episodes_out, traces): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let n = episodes_out.len() as f64;
    let mean_return = episodes_out.iter().map(|e| e.episode_return).sum::<f64>() / n;
    let mean_len = episodes_out.iter().map(|e| e.length as f64).sum::<f64>() / n;
    let errors: Option<Vec<f64>> = episodes_out.iter().map(|e| e.tracking_error).collect();
    Ok(EvalReport {
        mean_return,
        mean_reward_per_step: mean_return / mean_len,
        mean_tracking_error: errors.map(|e| e.iter().sum::<f64>() / n),
        fall_rate: episodes_out.iter().filter(|e| e.fell).count() as f64 / n,
        episodes: episodes_out,
        traces: traces.into_iter().flatten().collect(),
    })
}

fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("iter_{iteration:06}.ckpt"))
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub output_dir: PathBuf,
    pub iterations: u64,
    pub total_rollouts: u64,
    pub final_checkpoint: PathBuf,
    pub curve: Vec<CurveRow>,
    pub evals: Vec<EvalRow>,
}

/// Train with full on-disk bookkeeping under `cfg.output_dir()`:
/// the resolved config, `learning_curve.csv`, `eval.csv` and checkpoints at
/// iteration 0, at every evaluation and at the end. A failing iteration
/// writes `iter_NNNNNN_error.ckpt` with the last good parameters before the
/// error is returned.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_toml_string()?).map_err(|e| Error::io(&config_path, e))?;

    let pool = worker_pool(cfg.run.workers)?;
    let mut trainer = Trainer::new(cfg)?;
    let initial = checkpoint_path(&dir, 0);
    trainer.checkpoint(cfg)?.save(&initial)?;
    let mut last_saved = (0, initial);

    let mut curve_log = CsvLog::create(&dir.join(logs::LEARNING_CURVE_FILE), CurveRow::HEADER)?;
    let mut eval_log = CsvLog::create(&dir.join(logs::EVAL_FILE), EvalRow::HEADER)?;
    let mut curve = Vec::new();
    let mut evals = Vec::new();
    let start = Instant::now();

    while trainer.within_budget(cfg.run.max_rollouts) {
        let stats = match trainer.step(cfg, pool.as_ref()) {
            Ok(s) => s,
            Err(e) => {
                let path = dir
                    .join(CHECKPOINT_DIR)
                    .join(format!("iter_{:06}_error.ckpt", trainer.iteration()));
                trainer.checkpoint(cfg)?.save(&path)?;
                return Err(e);
            }
        };
        let wall = cfg.run.log_wall_time.then(|| start.elapsed().as_secs_f64());
        let row = CurveRow::new(&stats, wall);
        curve_log.append(&row)?;
        curve.push(row);

        let it = trainer.iteration();
        if cfg.run.eval_every > 0 && it % cfg.run.eval_every == 0 {
            let report = evaluate(
                cfg,
                &trainer.policy()?,
                trainer.normalizer(),
                cfg.run.eval_episodes,
                false,
                pool.as_ref(),
            )?;
            let row = EvalRow {
                iteration: it,
                total_rollouts: trainer.total_rollouts(),
                mean_return: report.mean_return,
                mean_tracking_error: report.mean_tracking_error,
                fall_rate: report.fall_rate,
            };
            eval_log.append(&row)?;
            evals.push(row);
            let path = checkpoint_path(&dir, it);
            trainer.checkpoint(cfg)?.save(&path)?;
            last_saved = (it, path);
        }
    }
    if last_saved.0 != trainer.iteration() {
        let path = checkpoint_path(&dir, trainer.iteration());
        trainer.checkpoint(cfg)?.save(&path)?;
        last_saved = (trainer.iteration(), path);
    }
    Ok(TrainSummary {
        output_dir: dir,
        iterations: trainer.iteration(),
        total_rollouts: trainer.total_rollouts(),
        final_checkpoint: last_saved.1,
        curve,
        evals,
    })
}

/// Load a checkpoint for `cfg`, checking shape and config hash. A hash
/// mismatch is a warning when `force` is set.
pub fn load_policy(cfg: &RunConfig, path: &Path, force: bool) -> Result<(Checkpoint, Option<String>)> {
    let ck = Checkpoint::load(path)?;
    ck.verify_shape(&policy_shape(cfg)?)?;
    let warning = ck.verify_hash(&cfg.policy_hash()?, force)?;
    if let Some(n) = &ck.normalizer {
        if n.dim() != ck.header.shape.input_dim {
            return Err(Error::CheckpointShape {
                checkpoint: format!("normalizer over {} channels", n.dim()),
                config: ck.header.shape.to_string(),
            });
        }
    }
    Ok((ck, warning))
}

/// Write an evaluation report: `episodes.csv` plus one
/// `trace_seed<k>.csv` per traced episode.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    logs::write_rows(&dir.join(EPISODES_FILE), &report.episodes)?;
    for t in &report.traces {
        logs::write_trace(&dir.join(format!("trace_seed{}.csv", t.seed)), &t.header, &t.rows)?;
    }
    Ok(())
}

/// Learning curves of two arms trained on the same seeds, aligned by
/// iteration.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CompareRow {
    pub seed: u64,
    pub iteration: u64,
    pub total_rollouts_a: Option<u64>,
    pub mean_return_a: Option<f64>,
    pub total_rollouts_b: Option<u64>,
    pub mean_return_b: Option<f64>,
}

impl Columns for CompareRow {
    const HEADER: &'static [&'static str] = &[
        "seed",
        "iteration",
        "total_rollouts_a",
        "mean_return_a",
        "total_rollouts_b",
        "mean_return_b",
    ];
}

/// Final evaluation of both arms for one seed; `delta = final_b - final_a`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CompareFinal {
    pub seed: u64,
    pub final_return_a: f64,
    pub final_return_b: f64,
    pub final_reward_per_step_a: f64,
    pub final_reward_per_step_b: f64,
    pub delta: f64,
}

impl Columns for CompareFinal {
    const HEADER: &'static [&'static str] = &[
        "seed",
        "final_return_a",
        "final_return_b",
        "final_reward_per_step_a",
        "final_reward_per_step_b",
        "delta",
    ];
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub curves: Vec<CompareRow>,
    pub finals: Vec<CompareFinal>,
}

impl Comparison {
    pub fn mean_delta(&self) -> f64 {
        self.finals.iter().map(|f| f.delta).sum::<f64>() / self.finals.len().max(1) as f64
    }
}

/// Train the final policy of one arm and evaluate it.
pub fn train_and_evaluate(cfg: &RunConfig) -> Result<(Vec<CurveRow>, EvalReport)> {
    let (trainer, curve) = train_in_memory(cfg)?;
    let pool = worker_pool(cfg.run.workers)?;
    let report = evaluate(
        cfg,
        &trainer.policy()?,
        trainer.normalizer(),
        cfg.run.eval_episodes,
        false,
        pool.as_ref(),
    )?;
    Ok((curve, report))
}

/// Train both configurations on every seed in `seeds` under the same
/// rollout budget (`budget` overrides `run.max_rollouts` of both).
pub fn compare(a: &RunConfig, b: &RunConfig, seeds: &[u64], budget: Option<u64>) -> Result<Comparison> {
    if a.env.kind != b.env.kind {
        return Err(Error::Config(format!(
            "cannot compare a {:?} run with a {:?} run",
            a.env.kind, b.env.kind
        )));
    }
    let arm = |base: &RunConfig, seed: u64| {
        let mut cfg = base.clone();
        cfg.run.seed = seed;
        if let Some(budget) = budget {
            cfg.run.max_rollouts = budget;
        }
        train_and_evaluate(&cfg)
    };
    let mut out = Comparison {
        curves: Vec::new(),
        finals: Vec::new(),
    };
    for &seed in seeds {
        let (curve_a, eval_a) = arm(a, seed)?;
        let (curve_b, eval_b) = arm(b, seed)?;
        for i in 0..curve_a.len().max(curve_b.len()) {
            let (ra, rb) = (curve_a.get(i), curve_b.get(i));
            out.curves.push(CompareRow {
                seed,
                iteration: i as u64 + 1,
                total_rollouts_a: ra.map(|r| r.total_rollouts),
                mean_return_a: ra.map(|r| r.mean_return),
                total_rollouts_b: rb.map(|r| r.total_rollouts),
                mean_return_b: rb.map(|r| r.mean_return),
            });
        }
        out.finals.push(CompareFinal {
            seed,
            final_return_a: eval_a.mean_return,
            final_return_b: eval_b.mean_return,
            final_reward_per_step_a: eval_a.mean_reward_per_step,
            final_reward_per_step_b: eval_b.mean_reward_per_step,
            delta: eval_b.mean_return - eval_a.mean_return,
        });
    }
    Ok(out)
}

pub fn write_comparison(cmp: &Comparison, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    logs::write_rows(&dir.join("compare_curves.csv"), &cmp.curves)?;
    logs::write_rows(&dir.join("compare_final.csv"), &cmp.finals)
}

/// Newest checkpoint in a run directory, ignoring error snapshots.
pub fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut best: Option<PathBuf> = None;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let usable = name.starts_with("iter_") && name.ends_with(".ckpt") && !name.contains("error");
        if usable && best.as_ref().is_none_or(|b| path > *b) {
            best = Some(path);
        }
    }
    best.ok_or_else(|| Error::Config(format!("no checkpoints in {}", dir.display())))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PlotCurveRow {
    pub run: String,
    pub iteration: u64,
    pub total_rollouts: u64,
    pub total_env_steps: u64,
    pub mean_return: f64,
}

impl Columns for PlotCurveRow {
    const HEADER: &'static [&'static str] = &["run", "iteration", "total_rollouts", "total_env_steps", "mean_return"];
}

/// Gather plot-ready data from finished runs into `out_dir`: every learning
/// curve in long format (`learning_curves.csv`) and a one-episode trace of
/// each run's newest checkpoint (`<run>_trace.csv`).
pub fn export_plots(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut curves = Vec::new();
    let mut written = Vec::new();
    for run_dir in run_dirs {
        let name = run_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("run")
            .to_string();
        let cfg = RunConfig::load(&run_dir.join(CONFIG_FILE), &[])?;
        let rows: Vec<CurveRow> = logs::read_rows(&run_dir.join(logs::LEARNING_CURVE_FILE))?;
        curves.extend(rows.into_iter().map(|r| PlotCurveRow {
            run: name.clone(),
            iteration: r.iteration,
            total_rollouts: r.total_rollouts,
            total_env_steps: r.total_env_steps,
            mean_return: r.mean_return,
        }));
        let (ck, _) = load_policy(&cfg, &latest_checkpoint(run_dir)?, false)?;
        let report = evaluate(&cfg, &ck.params, ck.normalizer.as_ref(), 1, true, None)?;
        let trace = &report.traces[0];
        let path = out_dir.join(format!("{name}_trace.csv"));
        logs::write_trace(&path, &trace.header, &trace.rows)?;
        written.push(path);
    }
    let path = out_dir.join("learning_curves.csv");
    logs::write_rows(&path, &curves)?;
    written.insert(0, path);
    Ok(written)
}
