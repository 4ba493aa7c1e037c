//! Run configuration: a nested TOML document with documented defaults.
//!
//! Loading goes through three stages. Dotted `--set` overrides are applied
//! to the raw document, defaults that depend on the environment kind and gait
//! are merged underneath it, and the result is deserialized strictly so an
//! unknown or ill-typed key is reported with its full path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::env::pointmass::PointMassConfig;
use crate::env::quadruped::QuadrupedConfig;
use crate::env::Wiring;
use crate::error::{Error, Result};
use crate::optim::{ArsConfig, PpoConfig};
use crate::policy::{ActionBounds, PolicyKind};
use crate::tg::{gait_table, Gait, TgConfig};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "PMTG_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Pointmass,
    Quadruped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub kind: EnvKind,
    pub wiring: Wiring,
    pub pointmass: PointMassConfig,
    pub quadruped: QuadrupedConfig,
}

/// Leg generator constants and modulation bounds. Defaults come from the
/// gait table for `gait`. Ignored by the point-mass task, whose figure-eight
/// generator is configured under `env.pointmass`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TgSection {
    pub gait: Gait,
    pub generator: TgConfig,
    pub bounds: ActionBounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    /// Hidden widths, used by `mlp` only.
    pub hidden: [usize; 2],
    /// Output bias for `linear`. Defaults to on for the point-mass and off
    /// for the quadruped, which keeps the 77-parameter layout.
    pub bias: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ars,
    Ppo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub algorithm: Algorithm,
    pub ars: ArsConfig,
    pub ppo: PpoConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Master seed every random stream is derived from.
    pub seed: u64,
    /// Training stops before an iteration that would exceed this many rollouts.
    pub max_rollouts: u64,
    /// Evaluate and checkpoint every this many iterations (0 disables).
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Keep external pushes on during evaluation.
    pub eval_perturbations: bool,
    pub output_dir: PathBuf,
    /// Rollout workers; 1 runs everything on the calling thread.
    pub workers: usize,
    /// Record elapsed seconds in the learning curve. Off by default so
    /// reruns produce byte-identical logs.
    pub log_wall_time: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            max_rollouts: 5000,
            eval_every: 10,
            eval_episodes: 4,
            eval_perturbations: false,
            output_dir: PathBuf::from("runs/default"),
            workers: 1,
            log_wall_time: false,
        }
    }
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSection,
    pub tg: TgSection,
    pub policy: PolicySection,
    pub optim: OptimSection,
    pub run: RunSection,
}

impl RunConfig {
    /// Parse a TOML document, apply `overrides` (`dotted.key=value`), fill
    /// defaults and validate.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid TOML: {}", e.message())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut full = defaults_for(&doc)?;
        merge(&mut full, doc);
        let cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(full)).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// The default configuration for an environment kind.
    pub fn defaults(kind: EnvKind) -> Result<Self> {
        let kind = match kind {
            EnvKind::Pointmass => "pointmass",
            EnvKind::Quadruped => "quadruped",
        };
        Self::from_toml_str(&format!("[env]\nkind = \"{kind}\"\n"), &[])
    }

    pub fn validate(&self) -> Result<()> {
        match self.env.kind {
            EnvKind::Pointmass => self.env.pointmass.validate()?,
            EnvKind::Quadruped => {
                self.env.quadruped.validate()?;
                self.tg.generator.validate()?;
                self.tg.bounds.validate()?;
            }
        }
        match self.optim.algorithm {
            Algorithm::Ars => self.optim.ars.validate()?,
            Algorithm::Ppo => self.optim.ppo.validate()?,
        }
        if self.run.eval_episodes == 0 {
            return Err(Error::Config("run.eval_episodes must be at least 1".into()));
        }
        if self.run.workers == 0 {
            return Err(Error::Config("run.workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 over the sections that determine what a policy's parameters
    /// mean: environment, generator and policy architecture. Output paths,
    /// budgets and optimizer settings do not change it.
    pub fn policy_hash(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Identity<'a> {
            env: &'a EnvSection,
            tg: &'a TgSection,
            policy: &'a PolicySection,
        }
        let text = toml::to_string(&Identity {
            env: &self.env,
            tg: &self.tg,
            policy: &self.policy,
        })
        .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
        Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
    }

    /// Whether the active optimizer keeps observation statistics.
    pub fn normalize_obs(&self) -> bool {
        match self.optim.algorithm {
            Algorithm::Ars => self.optim.ars.normalize_obs,
            Algorithm::Ppo => self.optim.ppo.normalize_obs,
        }
    }

    /// `run.output_dir`, placed under `$PMTG_OUTPUT_ROOT` when it is relative
    /// and the variable is set.
    pub fn output_dir(&self) -> PathBuf {
        let dir = &self.run.output_dir;
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if dir.is_relative() => Path::new(&root).join(dir),
            _ => dir.clone(),
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    Value::try_from(v).expect("config sections serialize to TOML")
}

/// Defaults underneath `doc`, which may select the environment kind and gait.
fn defaults_for(doc: &Table) -> Result<Table> {
    let lookup = |section: &str, key: &str| doc.get(section).and_then(|s| s.get(key)).and_then(Value::as_str);
    let kind = lookup("env", "kind").and_then(|k| k.parse::<EnvKindName>().ok()).map(|k| k.0);
    let gait = match lookup("tg", "gait") {
        Some(g) => g.parse::<Gait>()?,
        None => Gait::Walk,
    };
    let quadruped = kind == Some(EnvKind::Quadruped);

    let mut env = Table::new();
    env.insert("wiring".into(), to_value(&Wiring::Pmtg));
    env.insert("pointmass".into(), to_value(&PointMassConfig::default()));
    env.insert("quadruped".into(), to_value(&QuadrupedConfig::default()));

    let tg = TgSection {
        gait,
        generator: gait_table(gait),
        bounds: ActionBounds::for_gait(gait),
    };
    let policy = PolicySection {
        kind: PolicyKind::Linear,
        hidden: [32, 32],
        bias: !quadruped,
    };
    let optim = OptimSection {
        algorithm: Algorithm::Ars,
        ars: ArsConfig {
            normalize_obs: quadruped,
            ..ArsConfig::default()
        },
        ppo: PpoConfig {
            normalize_obs: quadruped,
            ..PpoConfig::default()
        },
    };

    let mut out = Table::new();
    out.insert("env".into(), Value::Table(env));
    out.insert("tg".into(), to_value(&tg));
    out.insert("policy".into(), to_value(&policy));
    out.insert("optim".into(), to_value(&optim));
    out.insert("run".into(), to_value(&RunSection::default()));
    Ok(out)
}

struct EnvKindName(EnvKind);

impl std::str::FromStr for EnvKindName {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "pointmass" => Ok(Self(EnvKind::Pointmass)),
            "quadruped" => Ok(Self(EnvKind::Quadruped)),
            _ => Err(()),
        }
    }
}

/// Recursively overlay `over` onto `base`; values in `over` win.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Apply one `dotted.path=value` override. The value is parsed as a TOML
/// literal and falls back to a bare string.
pub fn apply_override(doc: &mut Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key.path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));

    let (last, parents) = keys.split_last().expect("at least one key");
    let mut table = doc;
    for key in parents {
        let entry = table.entry(key.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{spec}`: `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
