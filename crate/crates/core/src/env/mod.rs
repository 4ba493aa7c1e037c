//! Environments wired to the policy through a trajectory generator.
//!
//! A [`ControlTask`] owns the environment together with its wiring: it
//! builds the policy observation, turns the raw policy output into an
//! environment action (through the generator or directly), and advances
//! the generator phase.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod pointmass;
pub mod quadruped;

/// How the policy is connected to the environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wiring {
    /// Policy modulates the generator and adds corrections to its output.
    Pmtg,
    /// Generator removed; the policy outputs the action directly.
    Vanilla,
    /// Vanilla plus `(sin, cos)` of a clock phase in the observation.
    VanillaTime,
}

impl FromStr for Wiring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pmtg" => Ok(Wiring::Pmtg),
            "vanilla" => Ok(Wiring::Vanilla),
            "vanilla_time" => Ok(Wiring::VanillaTime),
            other => Err(Error::Config(format!(
                "unknown wiring `{other}` (expected pmtg, vanilla or vanilla_time)"
            ))),
        }
    }
}

impl fmt::Display for Wiring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Wiring::Pmtg => "pmtg",
            Wiring::Vanilla => "vanilla",
            Wiring::VanillaTime => "vanilla_time",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

/// Per-episode task metrics beyond the return.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpisodeSummary {
    /// Mean `|v_R - v_T|` over the episode, for speed-tracking tasks.
    pub tracking_error: Option<f64>,
    pub fell: bool,
    /// Simulated time at termination, seconds.
    pub duration: f64,
}

pub trait ControlTask: Send {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Reset and return the first observation.
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;
    /// Apply a raw policy output; returns the next observation.
    fn step(&mut self, raw_action: &[f64]) -> Result<(Vec<f64>, StepOutcome)>;
    fn trace_header(&self) -> &'static [&'static str];
    /// Diagnostics of the most recent step.
    fn trace_row(&self) -> Vec<f64>;
    fn summary(&self) -> EpisodeSummary;
}
