//! Planar point that jumps to the commanded position each step, rewarded by
//! its negative distance to a deformed, displaced figure-eight.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ControlTask, EpisodeSummary, StepOutcome, Wiring};
use crate::error::{ensure_finite, Error, Result};
use crate::policy::{squash, Interval};
use crate::seed;
use crate::tg::{advance_phase, figure_eight, TgState, EIGHT_STEP};

/// Half-width of the square workspace, meters.
pub const WORKSPACE_HALF: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointMassConfig {
    /// Rotation of the target curve, degrees.
    pub rotation_deg: f64,
    /// Axis scaling applied before the rotation.
    pub scale: [f64; 2],
    /// Amplitude of the undeformed base curve, meters.
    pub base_amplitude: f64,
    pub offset: [f64; 2],
    /// Steps per target cycle.
    pub period: usize,
    pub episode_len: usize,
    /// Standard deviation of the reset position noise, meters.
    pub reset_noise: f64,
    /// Range the generator amplitudes `a_x`, `a_y` are squashed into.
    pub amplitude_bounds: Interval,
    /// Corrections are squashed into `[-feedback_range, feedback_range]`.
    pub feedback_range: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            rotation_deg: 20.0,
            scale: [1.3, 0.7],
            base_amplitude: 0.6,
            offset: [0.2, 0.1],
            period: (1.0 / EIGHT_STEP).round() as usize,
            episode_len: 400,
            reset_noise: 0.05,
            amplitude_bounds: Interval::new(0.0, 2.0),
            feedback_range: 0.5,
        }
    }
}

impl PointMassConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "pointmass config",
            &[
                self.rotation_deg,
                self.scale[0],
                self.scale[1],
                self.base_amplitude,
                self.offset[0],
                self.offset[1],
                self.reset_noise,
                self.feedback_range,
            ],
        )?;
        if self.period == 0 || self.episode_len == 0 {
            return Err(Error::Config("pointmass period and episode_len must be positive".into()));
        }
        if self.reset_noise < 0.0 || self.feedback_range <= 0.0 {
            return Err(Error::Config(
                "pointmass reset_noise must be >= 0 and feedback_range > 0".into(),
            ));
        }
        self.amplitude_bounds.validate("pointmass.amplitude_bounds")?;
        let curve = self.curve();
        if curve.determinant().abs() < 1e-12 {
            return Err(Error::Config("pointmass deformation is singular".into()));
        }
        for k in 0..self.period {
            let (x, y) = pm_target(k, &curve);
            if x.abs() > WORKSPACE_HALF || y.abs() > WORKSPACE_HALF {
                return Err(Error::Config(format!(
                    "target curve leaves the workspace at step {k}: ({x:.3}, {y:.3})"
                )));
            }
        }
        Ok(())
    }

    pub fn curve(&self) -> TargetCurve {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let [sx, sy] = self.scale;
        let a = self.base_amplitude;
        TargetCurve {
            deformation: [[a * c * sx, -a * s * sy], [a * s * sx, a * c * sy]],
            offset: self.offset,
            period: self.period,
        }
    }
}

/// `target(k) = D · eight(k / period) + offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetCurve {
    /// Row-major 2x2 linear map.
    pub deformation: [[f64; 2]; 2],
    pub offset: [f64; 2],
    pub period: usize,
}

impl TargetCurve {
    fn determinant(&self) -> f64 {
        let d = &self.deformation;
        d[0][0] * d[1][1] - d[0][1] * d[1][0]
    }
}

pub fn pm_target(step_index: usize, curve: &TargetCurve) -> (f64, f64) {
    let t = (step_index % curve.period) as f64 / curve.period as f64;
    let (ex, ey) = figure_eight(t, 1.0, 1.0);
    let d = &curve.deformation;
    (
        d[0][0] * ex + d[0][1] * ey + curve.offset[0],
        d[1][0] * ex + d[1][1] * ey + curve.offset[1],
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointState {
    pub x: f64,
    pub y: f64,
    pub step_index: usize,
}

fn clamp_workspace(v: f64) -> f64 {
    v.clamp(-WORKSPACE_HALF, WORKSPACE_HALF)
}

/// The bare environment, without any policy wiring.
#[derive(Clone, Debug)]
pub struct PointMass {
    pub cfg: PointMassConfig,
    pub curve: TargetCurve,
}

impl PointMass {
    pub fn new(cfg: PointMassConfig) -> Result<Self> {
        cfg.validate()?;
        let curve = cfg.curve();
        Ok(Self { cfg, curve })
    }

    pub fn reset(&self, seed: u64) -> PointState {
        let (tx, ty) = pm_target(0, &self.curve);
        let (mut x, mut y) = (tx, ty);
        if self.cfg.reset_noise > 0.0 {
            let mut rng = seed::rng(seed);
            let n = Normal::new(0.0, self.cfg.reset_noise).expect("validated noise");
            x += n.sample(&mut rng);
            y += n.sample(&mut rng);
        }
        PointState {
            x: clamp_workspace(x),
            y: clamp_workspace(y),
            step_index: 0,
        }
    }

    /// Returns `(next_state, reward, done)`.
    pub fn step(&self, state: &PointState, u: (f64, f64)) -> Result<(PointState, f64, bool)> {
        ensure_finite("pointmass action", &[u.0, u.1])?;
        let (x, y) = (clamp_workspace(u.0), clamp_workspace(u.1));
        let (tx, ty) = pm_target(state.step_index, &self.curve);
        let reward = -(x - tx).hypot(y - ty);
        let step_index = state.step_index + 1;
        Ok((
            PointState { x, y, step_index },
            reward,
            step_index >= self.cfg.episode_len,
        ))
    }
}

/// Point-mass environment plus its policy wiring.
#[derive(Clone, Debug)]
pub struct PointMassTask {
    env: PointMass,
    wiring: Wiring,
    state: PointState,
    clock: TgState,
    last: [f64; 7],
}

impl PointMassTask {
    pub fn new(cfg: PointMassConfig, wiring: Wiring) -> Result<Self> {
        let env = PointMass::new(cfg)?;
        let state = env.reset(0);
        Ok(Self {
            env,
            wiring,
            state,
            clock: TgState::default(),
            last: [0.0; 7],
        })
    }

    pub fn env(&self) -> &PointMass {
        &self.env
    }

    pub fn state(&self) -> &PointState {
        &self.state
    }

    fn observe(&self) -> Vec<f64> {
        let [s, c] = self.clock.encoding();
        match self.wiring {
            Wiring::Vanilla => vec![self.state.x, self.state.y],
            Wiring::Pmtg | Wiring::VanillaTime => vec![self.state.x, self.state.y, s, c],
        }
    }

    /// Maps a raw policy output to `(desired position, amplitudes)`.
    fn action(&self, raw: &[f64]) -> ((f64, f64), (f64, f64)) {
        match self.wiring {
            Wiring::Pmtg => {
                let fb = Interval::symmetric(self.env.cfg.feedback_range);
                let amp = self.env.cfg.amplitude_bounds;
                let (a_x, a_y) = (squash(raw[2], amp), squash(raw[3], amp));
                let (ex, ey) = figure_eight(self.clock.cycle_fraction(), a_x, a_y);
                ((ex + squash(raw[0], fb), ey + squash(raw[1], fb)), (a_x, a_y))
            }
            Wiring::Vanilla | Wiring::VanillaTime => {
                let ws = Interval::symmetric(WORKSPACE_HALF);
                ((squash(raw[0], ws), squash(raw[1], ws)), (f64::NAN, f64::NAN))
            }
        }
    }
}

/// Environment adapter for a wiring mode given by name.
pub fn pm_wiring(mode: &str, cfg: PointMassConfig) -> Result<PointMassTask> {
    PointMassTask::new(cfg, mode.parse()?)
}

impl ControlTask for PointMassTask {
    fn obs_dim(&self) -> usize {
        match self.wiring {
            Wiring::Vanilla => 2,
            Wiring::Pmtg | Wiring::VanillaTime => 4,
        }
    }

    fn action_dim(&self) -> usize {
        match self.wiring {
            Wiring::Pmtg => 4,
            Wiring::Vanilla | Wiring::VanillaTime => 2,
        }
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.state = self.env.reset(seed);
        self.clock = TgState::default();
        self.last = [0.0; 7];
        Ok(self.observe())
    }

    fn step(&mut self, raw: &[f64]) -> Result<(Vec<f64>, StepOutcome)> {
        if raw.len() != self.action_dim() {
            return Err(Error::Shape(format!(
                "{} wiring expects {} actions, got {}",
                self.wiring,
                self.action_dim(),
                raw.len()
            )));
        }
        ensure_finite("raw action", raw)?;
        let (u, (a_x, a_y)) = self.action(raw);
        let k = self.state.step_index;
        let (next, reward, done) = self.env.step(&self.state, u)?;
        let (tx, ty) = pm_target(k, &self.env.curve);
        self.state = next;
        self.last = [next.x, next.y, tx, ty, reward, a_x, a_y];
        // one full cycle per target period
        self.clock = advance_phase(self.clock, 1.0 / self.env.curve.period as f64, 1.0)?;
        Ok((self.observe(), StepOutcome { reward, done }))
    }

    fn trace_header(&self) -> &'static [&'static str] {
        &["step", "x", "y", "target_x", "target_y", "reward", "a_x", "a_y"]
    }

    fn trace_row(&self) -> Vec<f64> {
        let mut row = vec![self.state.step_index as f64 - 1.0];
        row.extend_from_slice(&self.last);
        row
    }

    fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            tracking_error: None,
            fell: false,
            duration: self.state.step_index as f64,
        }
    }
}
