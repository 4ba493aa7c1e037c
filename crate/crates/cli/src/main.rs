//! Command-line front end for training, evaluating and comparing PMTG policies.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use pmtg::harness::config::{EnvKind, OUTPUT_ROOT_ENV};
use pmtg::harness::experiment::{self, write_comparison, write_report};
use pmtg::harness::{self, RunConfig};
use pmtg::policy::PolicyParams;

#[derive(Parser, Debug)]
#[command(name = "pmtg", version, about = "Policies modulating trajectory generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Overrides {
    /// Override a config key, e.g. `--set run.seed=3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy; writes the resolved config, logs and checkpoints.
    Train {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on seeds 0..episodes.
    Eval {
        config: PathBuf,
        /// Checkpoint to evaluate; defaults to the newest one in the run directory.
        #[arg(long, conflicts_with = "tg_only")]
        checkpoint: Option<PathBuf>,
        /// Evaluate the generator alone: zero feedback and midpoint modulation.
        #[arg(long)]
        tg_only: bool,
        #[arg(long)]
        episodes: Option<usize>,
        /// Write per-step diagnostics for every episode.
        #[arg(long)]
        trace: bool,
        /// Report directory; defaults to `<output_dir>/eval`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Accept a checkpoint whose config hash differs from the config.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train two configurations on the same seeds and budget and compare them.
    Compare {
        config_a: PathBuf,
        config_b: PathBuf,
        /// Rollout budget for both arms; defaults to each config's `run.max_rollouts`.
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
        /// Overrides applied to both configurations.
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Collect plot-ready CSVs from finished run directories.
    ExportPlots {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Print the fully resolved configuration with every default filled in.
    PrintConfig {
        /// Config file to resolve; omit to print the defaults for `--kind`.
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_kind, required_unless_present = "config")]
        kind: Option<EnvKind>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn parse_kind(s: &str) -> Result<EnvKind, String> {
    match s {
        "pointmass" => Ok(EnvKind::Pointmass),
        "quadruped" => Ok(EnvKind::Quadruped),
        _ => Err(format!("unknown environment `{s}` (expected pointmass or quadruped)")),
    }
}

fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    Ok(RunConfig::load(path, &overrides.set)?)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let summary = harness::train(&cfg)?;
            println!(
                "trained {} iterations ({} rollouts); final checkpoint {}",
                summary.iterations,
                summary.total_rollouts,
                summary.final_checkpoint.display()
            );
            if let Some(last) = summary.evals.last() {
                println!("last evaluation: mean return {:.4}", last.mean_return);
            }
        }
        Command::Eval {
            config,
            checkpoint,
            tg_only,
            episodes,
            trace,
            out,
            force,
            overrides,
        } => {
            let cfg = load(&config, &overrides)?;
            let (params, normalizer) = if tg_only {
                (PolicyParams::zeros(harness::policy_shape(&cfg)?)?, None)
            } else {
                let path = match checkpoint {
                    Some(p) => p,
                    None => experiment::latest_checkpoint(&cfg.output_dir())?,
                };
                let (ck, warning) = harness::load_policy(&cfg, &path, force)
                    .with_context(|| format!("loading {}", path.display()))?;
                if let Some(w) = warning {
                    eprintln!("{w}");
                }
                (ck.params, ck.normalizer)
            };
            let episodes = episodes.unwrap_or(cfg.run.eval_episodes);
            let pool = experiment::worker_pool(cfg.run.workers)?;
            let report = harness::evaluate(&cfg, &params, normalizer.as_ref(), episodes, trace, pool.as_ref())?;
            let dir = out.unwrap_or_else(|| cfg.output_dir().join("eval"));
            write_report(&report, &dir)?;
            println!("episodes        {}", report.episodes.len());
            println!("mean return     {:.6}", report.mean_return);
            println!("reward per step {:.6}", report.mean_reward_per_step);
            if let Some(e) = report.mean_tracking_error {
                println!("tracking error  {e:.6} m/s");
            }
            println!("fall rate       {:.3}", report.fall_rate);
            for e in report.episodes.iter().filter(|e| e.fell) {
                println!("seed {} fell at t = {:.2} s", e.seed, e.duration_s);
            }
            println!("report written to {}", dir.display());
        }
        Command::Compare {
            config_a,
            config_b,
            budget,
            seeds,
            out,
            overrides,
        } => {
            let a = load(&config_a, &overrides)?;
            let b = load(&config_b, &overrides)?;
            if seeds.is_empty() {
                bail!("--seeds needs at least one seed");
            }
            let cmp = harness::compare(&a, &b, &seeds, budget)?;
            let out = match std::env::var_os(OUTPUT_ROOT_ENV) {
                Some(root) if out.is_relative() => PathBuf::from(root).join(out),
                _ => out,
            };
            write_comparison(&cmp, &out)?;
            println!("seed  final_a  final_b  delta(b-a)");
            for f in &cmp.finals {
                println!("{:>4}  {:.4}  {:.4}  {:+.4}", f.seed, f.final_return_a, f.final_return_b, f.delta);
            }
            println!("mean delta {:+.4}; curves in {}", cmp.mean_delta(), out.display());
        }
        Command::ExportPlots { runs, out } => {
            for path in harness::export_plots(&runs, &out)? {
                println!("{}", path.display());
            }
        }
        Command::PrintConfig {
            config,
            kind,
            overrides,
        } => {
            let cfg = match (config, kind) {
                (Some(path), _) => load(&path, &overrides)?,
                (None, Some(kind)) => {
                    let base = RunConfig::defaults(kind)?.to_toml_string()?;
                    RunConfig::from_toml_str(&base, &overrides.set)?
                }
                (None, None) => unreachable!("clap requires --kind without a config"),
            };
            print!("{}", cfg.to_toml_string()?);
        }
    }
    Ok(())
}
