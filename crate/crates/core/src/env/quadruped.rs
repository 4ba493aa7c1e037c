//! Sagittal-plane quadruped.
//!
//! A rigid body (`x`, `z`, pitch) carries four massless legs on its
//! centerline. Each leg is a position servo over swing `S` (rotation about
//! the hip, positive forward) and extension `E` (radians, mapped linearly to
//! leg length, larger is longer). Feet touch a flat floor through a
//! spring-damper normal law and a clamped tangential spring. Contact forces
//! are applied to the body at the hips. Integration is semi-implicit Euler.
//!
//! Pitch is positive nose-up. The IMU reports `[0, pitch, 0, pitch_rate]`:
//! the roll channels exist only to keep the observation layout of the
//! three-dimensional robot.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ControlTask, EpisodeSummary, StepOutcome, Wiring};
use crate::error::{ensure_finite, Error, Result};
use crate::policy::{
    assemble_observation, compose_action, split_and_squash, squash, ActionBounds, ActuatorLimits,
    TG_CHANNELS,
};
use crate::seed;
use crate::tg::{advance_phase, tg_leg_targets, LegCommand, LegPose, TgConfig, TgModulation, TgState, NUM_LEGS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotModel {
    /// kg.
    pub mass: f64,
    /// kg·m².
    pub pitch_inertia: f64,
    /// Longitudinal hip positions in the body frame, FL, FR, BL, BR.
    pub hip_offsets: [f64; NUM_LEGS],
    /// Leg length at the reference extension, m.
    pub leg_length: f64,
    /// Leg length change per radian of extension, m/rad.
    pub extension_gain: f64,
    /// Extension at which the leg has its nominal length.
    pub extension_ref: f64,
    pub actuator_limits: ActuatorLimits,
    /// rad/s.
    pub servo_rate_limit: f64,
    /// Fall when `|pitch|` exceeds this, rad.
    pub fall_pitch: f64,
    /// Fall when body height drops below this fraction of `leg_length`.
    pub fall_height_ratio: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self {
            mass: 6.0,
            pitch_inertia: 0.1,
            hip_offsets: [0.2, 0.2, -0.2, -0.2],
            leg_length: 0.25,
            extension_gain: 0.1,
            extension_ref: 1.2,
            actuator_limits: ActuatorLimits::default(),
            servo_rate_limit: 20.0,
            fall_pitch: 0.8,
            fall_height_ratio: 0.55,
        }
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "robot model",
            &[
                self.mass,
                self.pitch_inertia,
                self.leg_length,
                self.extension_gain,
                self.extension_ref,
                self.servo_rate_limit,
                self.fall_pitch,
                self.fall_height_ratio,
            ],
        )?;
        ensure_finite("robot model", &self.hip_offsets)?;
        if self.mass <= 0.0
            || self.pitch_inertia <= 0.0
            || self.leg_length <= 0.0
            || self.extension_gain <= 0.0
            || self.servo_rate_limit <= 0.0
        {
            return Err(Error::Config(
                "mass, pitch_inertia, leg_length, extension_gain and servo_rate_limit must be positive".into(),
            ));
        }
        self.actuator_limits.validate()?;
        let shortest = self.leg_length_at(self.actuator_limits.extension.lo);
        if shortest <= 0.0 {
            return Err(Error::Config(format!(
                "leg length at the lowest extension limit is {shortest:.4} m"
            )));
        }
        Ok(())
    }

    pub fn leg_length_at(&self, extension: f64) -> f64 {
        self.leg_length + self.extension_gain * (extension - self.extension_ref)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactModel {
    /// N/m.
    pub stiffness: f64,
    /// N·s/m.
    pub damping: f64,
    pub friction: f64,
    /// Tangential anchor spring, N/m.
    pub tangential_stiffness: f64,
    /// N·s/m.
    pub tangential_damping: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        Self {
            stiffness: 4000.0,
            damping: 40.0,
            friction: 0.8,
            tangential_stiffness: 4000.0,
            tangential_damping: 150.0,
        }
    }
}

impl ContactModel {
    pub fn validate(&self) -> Result<()> {
        let v = [
            self.stiffness,
            self.damping,
            self.friction,
            self.tangential_stiffness,
            self.tangential_damping,
        ];
        ensure_finite("contact model", &v)?;
        if v.iter().any(|&x| x < 0.0) {
            return Err(Error::Config("contact coefficients must be non-negative".into()));
        }
        if self.tangential_stiffness == 0.0 {
            return Err(Error::Config("contact.tangential_stiffness must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSchedule {
    pub enabled: bool,
    /// Pushes per episode.
    pub count: usize,
    /// Seconds each push lasts.
    pub duration: f64,
    /// Largest vertical force magnitude, N.
    pub max_vertical: f64,
    /// Largest horizontal force magnitude, N.
    pub max_horizontal: f64,
}

impl Default for PerturbationSchedule {
    fn default() -> Self {
        Self {
            enabled: true,
            count: 4,
            duration: 0.2,
            max_vertical: 60.0,
            max_horizontal: 10.0,
        }
    }
}

/// A constant push active on `[start, start + duration)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Push {
    pub start: f64,
    pub duration: f64,
    pub fx: f64,
    pub fz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    /// Top target speed, m/s.
    pub v_max: f64,
    /// Seconds.
    pub episode_length: f64,
    /// Fractions of the episode where the ramp up starts, the hold starts
    /// and the ramp down starts.
    pub profile_breakpoints: [f64; 3],
    /// Width in seconds of the trailing window over which robot and target
    /// speeds are averaged before the tracking error is taken. Stride-level
    /// speed oscillation would otherwise dominate the metric.
    pub tracking_window: f64,
    pub perturbations: PerturbationSchedule,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            v_max: 0.4,
            episode_length: 25.0,
            profile_breakpoints: [0.2, 0.45, 0.75],
            tracking_window: 1.0,
            perturbations: PerturbationSchedule::default(),
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("task", &[self.v_max, self.episode_length, self.tracking_window])?;
        ensure_finite("task", &self.profile_breakpoints)?;
        if self.v_max <= 0.0 || self.episode_length <= 0.0 || self.tracking_window <= 0.0 {
            return Err(Error::Config(
                "task v_max, episode_length and tracking_window must be positive".into(),
            ));
        }
        let [a, b, c] = self.profile_breakpoints;
        if !(0.0 <= a && a < b && b <= c && c < 1.0) {
            return Err(Error::Config(format!(
                "profile breakpoints must satisfy 0 <= a < b <= c < 1, got {:?}",
                self.profile_breakpoints
            )));
        }
        let p = &self.perturbations;
        ensure_finite("perturbations", &[p.duration, p.max_vertical, p.max_horizontal])?;
        if p.duration < 0.0 || p.max_vertical < 0.0 || p.max_horizontal < 0.0 {
            return Err(Error::Config("perturbation magnitudes must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadrupedConfig {
    pub model: RobotModel,
    pub contact: ContactModel,
    pub task: TaskSpec,
    /// Physics step, seconds.
    pub physics_dt: f64,
    pub gravity: f64,
    /// Standard deviation of the downward reset height offset, m.
    pub reset_noise: f64,
}

impl Default for QuadrupedConfig {
    fn default() -> Self {
        Self {
            model: RobotModel::default(),
            contact: ContactModel::default(),
            task: TaskSpec::default(),
            physics_dt: 0.001,
            gravity: 9.81,
            reset_noise: 0.005,
        }
    }
}

impl QuadrupedConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.contact.validate()?;
        self.task.validate()?;
        ensure_finite("quadruped config", &[self.physics_dt, self.gravity, self.reset_noise])?;
        if self.physics_dt <= 0.0 || self.reset_noise < 0.0 {
            return Err(Error::Config("physics_dt must be positive and reset_noise non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BodyState {
    pub x: f64,
    pub z: f64,
    pub pitch: f64,
    pub vx: f64,
    pub vz: f64,
    pub pitch_rate: f64,
    pub time: f64,
}

impl BodyState {
    fn rotate(&self, bx: f64, bz: f64) -> (f64, f64) {
        let (s, c) = self.pitch.sin_cos();
        (c * bx - s * bz, s * bx + c * bz)
    }
}

/// `v_max · exp(-(v_R - v_T)² / (2 v_max²))`.
pub fn track_reward(v_robot: f64, v_target: f64, v_max: f64) -> f64 {
    let e = v_robot - v_target;
    v_max * (-e * e / (2.0 * v_max * v_max)).exp()
}

/// Target speed: zero, ramp up, hold at `v_max`, ramp back to zero at the end.
pub fn speed_profile(t: f64, task: &TaskSpec) -> f64 {
    let len = task.episode_length;
    let [a, b, c] = task.profile_breakpoints.map(|f| f * len);
    let t = t.clamp(0.0, len);
    if t <= a {
        0.0
    } else if t < b {
        task.v_max * (t - a) / (b - a)
    } else if t <= c {
        task.v_max
    } else {
        task.v_max * (len - t) / (len - c)
    }
}

/// Seeded pushes for one episode, sorted by start time.
pub fn perturbation_schedule(seed: u64, task: &TaskSpec) -> Vec<Push> {
    let p = &task.perturbations;
    if !p.enabled || p.count == 0 {
        return Vec::new();
    }
    let mut rng = seed::rng(seed);
    let latest = (task.episode_length - p.duration).max(0.0);
    let mut pushes: Vec<Push> = (0..p.count)
        .map(|_| Push {
            start: rng.gen_range(0.0..=latest),
            duration: p.duration,
            fx: rng.gen_range(-1.0..=1.0) * p.max_horizontal,
            fz: rng.gen_range(-1.0..=1.0) * p.max_vertical,
        })
        .collect();
    pushes.sort_by(|a, b| a.start.total_cmp(&b.start));
    pushes
}

/// Net push force at time `t`.
pub fn perturbation_force(t: f64, pushes: &[Push]) -> (f64, f64) {
    pushes
        .iter()
        .filter(|p| p.start <= t && t < p.start + p.duration)
        .fold((0.0, 0.0), |(fx, fz), p| (fx + p.fx, fz + p.fz))
}

pub fn fall_check(body: &BodyState, model: &RobotModel) -> bool {
    body.pitch.abs() > model.fall_pitch || body.z < model.fall_height_ratio * model.leg_length
}

pub fn hip_position(body: &BodyState, leg: usize, model: &RobotModel) -> (f64, f64) {
    let (hx, hz) = body.rotate(model.hip_offsets[leg], 0.0);
    (body.x + hx, body.z + hz)
}

/// World foot position for a leg at swing `S` and extension `E`.
pub fn foot_kinematics(body: &BodyState, leg: usize, swing: f64, extension: f64, model: &RobotModel) -> Result<(f64, f64)> {
    let l = model.leg_length_at(extension);
    if l <= 0.0 {
        return Err(Error::Config(format!(
            "extension {extension} gives non-positive leg length {l}"
        )));
    }
    let (hx, hz) = hip_position(body, leg, model);
    let (s, c) = swing.sin_cos();
    let (fx, fz) = body.rotate(l * s, -l * c);
    Ok((hx + fx, hz + fz))
}

/// Output of one control period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadStep {
    pub imu: [f64; 4],
    pub reward: f64,
    pub done: bool,
    pub fell: bool,
    /// Mean forward speed over the control period, m/s.
    pub speed: f64,
    pub target_speed: f64,
}

/// Physics state of one episode.
#[derive(Clone, Debug)]
pub struct Simulator {
    cfg: QuadrupedConfig,
    substeps: usize,
    body: BodyState,
    servo: LegCommand,
    anchors: [Option<f64>; NUM_LEGS],
    pushes: Vec<Push>,
    net_force: (f64, f64),
    normal_forces: [f64; NUM_LEGS],
    tangential_forces: [f64; NUM_LEGS],
}

impl Simulator {
    pub fn new(cfg: QuadrupedConfig, control_dt: f64) -> Result<Self> {
        cfg.validate()?;
        let ratio = control_dt / cfg.physics_dt;
        let substeps = ratio.round() as usize;
        if substeps == 0 || (ratio - substeps as f64).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "control period {control_dt} is not a whole multiple of physics_dt {}",
                cfg.physics_dt
            )));
        }
        let mut sim = Self {
            cfg,
            substeps,
            body: BodyState::default(),
            servo: LegCommand::default(),
            anchors: [None; NUM_LEGS],
            pushes: Vec::new(),
            net_force: (0.0, 0.0),
            normal_forces: [0.0; NUM_LEGS],
            tangential_forces: [0.0; NUM_LEGS],
        };
        sim.reset(0, 0.0);
        Ok(sim)
    }

    pub fn config(&self) -> &QuadrupedConfig {
        &self.cfg
    }

    pub fn body(&self) -> &BodyState {
        &self.body
    }

    pub fn servo(&self) -> &LegCommand {
        &self.servo
    }

    pub fn pushes(&self) -> &[Push] {
        &self.pushes
    }

    /// Contact plus gravity and push force on the body after the last physics step.
    pub fn net_force(&self) -> (f64, f64) {
        self.net_force
    }

    pub fn normal_forces(&self) -> [f64; NUM_LEGS] {
        self.normal_forces
    }

    pub fn tangential_forces(&self) -> [f64; NUM_LEGS] {
        self.tangential_forces
    }

    /// Body at rest with legs straight under the hips at swing center `swing_center`.
    pub fn reset(&mut self, seed: u64, swing_center: f64) -> BodyState {
        let model = &self.cfg.model;
        let mut z = model.leg_length * swing_center.cos();
        if self.cfg.reset_noise > 0.0 {
            let mut rng = seed::stream(seed, "reset", &[]);
            let n = Normal::new(0.0, self.cfg.reset_noise).expect("validated noise");
            let drop: f64 = n.sample(&mut rng);
            z -= drop.abs();
        }
        self.body = BodyState {
            z,
            ..BodyState::default()
        };
        self.servo = LegCommand {
            legs: [LegPose {
                swing: swing_center,
                extension: model.extension_ref,
            }; NUM_LEGS],
        };
        self.anchors = [None; NUM_LEGS];
        self.pushes = perturbation_schedule(seed::derive(seed, "perturb", &[]), &self.cfg.task);
        self.net_force = (0.0, 0.0);
        self.normal_forces = [0.0; NUM_LEGS];
        self.tangential_forces = [0.0; NUM_LEGS];
        self.body
    }

    /// Place the body directly; used by tests and tools.
    pub fn set_body(&mut self, body: BodyState) {
        self.body = body;
        self.anchors = [None; NUM_LEGS];
    }

    pub fn set_servo(&mut self, servo: LegCommand) {
        self.servo = servo;
    }

    /// One physics substep with the servos moving at `rates` (rad/s) until
    /// they reach `target`.
    fn physics_step(&mut self, target: &LegCommand, rates: &[[f64; 2]; NUM_LEGS]) {
        let dt = self.cfg.physics_dt;
        let model = &self.cfg.model;
        let contact = &self.cfg.contact;
        let b = self.body;

        let mut fx_total = 0.0;
        let mut fz_total = -model.mass * self.cfg.gravity;
        let mut torque = 0.0;
        for leg in 0..NUM_LEGS {
            let cur = self.servo.legs[leg];
            let want = target.legs[leg];
            let (ms, me) = (rates[leg][0] * dt, rates[leg][1] * dt);
            let d_s = (want.swing - cur.swing).clamp(-ms, ms);
            let d_e = (want.extension - cur.extension).clamp(-me, me);
            let pose = LegPose {
                swing: cur.swing + d_s,
                extension: cur.extension + d_e,
            };
            self.servo.legs[leg] = pose;

            // leg vector in the body frame and its rate from the servo motion
            let l = model.leg_length_at(pose.extension);
            let l_dot = model.extension_gain * d_e / dt;
            let s_dot = d_s / dt;
            let (sn, cs) = pose.swing.sin_cos();
            let (lx, lz) = (l * sn, -l * cs);
            let (lx_dot, lz_dot) = (l_dot * sn + l * cs * s_dot, -l_dot * cs + l * sn * s_dot);

            let (hx, hz) = b.rotate(model.hip_offsets[leg], 0.0);
            let (wx, wz) = b.rotate(lx, lz);
            let (rx, rz) = (hx + wx, hz + wz);
            let foot_x = b.x + rx;
            let foot_z = b.z + rz;
            let (dwx, dwz) = b.rotate(lx_dot, lz_dot);
            let vfx = b.vx - b.pitch_rate * rz + dwx;
            let vfz = b.vz + b.pitch_rate * rx + dwz;

            let (mut fn_, mut ft) = (0.0, 0.0);
            if foot_z < 0.0 {
                fn_ = (contact.stiffness * -foot_z - contact.damping * vfz).max(0.0);
                let anchor = self.anchors[leg].get_or_insert(foot_x);
                ft = -contact.tangential_stiffness * (foot_x - *anchor) - contact.tangential_damping * vfx;
                let limit = contact.friction * fn_;
                if ft.abs() > limit {
                    ft = ft.signum() * limit;
                    // slipping: drag the anchor so the spring alone carries the clamped force
                    *anchor = foot_x + ft / contact.tangential_stiffness;
                }
            } else {
                self.anchors[leg] = None;
            }
            self.normal_forces[leg] = fn_;
            self.tangential_forces[leg] = ft;
            fx_total += ft;
            fz_total += fn_;
            torque += hx * fn_ - hz * ft;
        }
        let (px, pz) = perturbation_force(b.time, &self.pushes);
        fx_total += px;
        fz_total += pz;
        self.net_force = (fx_total, fz_total);

        let body = &mut self.body;
        body.vx += dt * fx_total / model.mass;
        body.vz += dt * fz_total / model.mass;
        body.pitch_rate += dt * torque / model.pitch_inertia;
        body.x += dt * body.vx;
        body.z += dt * body.vz;
        body.pitch += dt * body.pitch_rate;
        body.time += dt;
    }

    /// Advance one control period toward `targets`.
    pub fn step(&mut self, targets: &LegCommand) -> Result<QuadStep> {
        let targets = self.cfg.model.actuator_limits.clamp(targets);
        let x0 = self.body.x;
        // servos sweep toward the new targets over the whole control period
        let control_dt = self.substeps as f64 * self.cfg.physics_dt;
        let limit = self.cfg.model.servo_rate_limit;
        let mut rates = [[0.0; 2]; NUM_LEGS];
        for (leg, r) in rates.iter_mut().enumerate() {
            let (cur, want) = (self.servo.legs[leg], targets.legs[leg]);
            r[0] = ((want.swing - cur.swing).abs() / control_dt).min(limit);
            r[1] = ((want.extension - cur.extension).abs() / control_dt).min(limit);
        }
        for _ in 0..self.substeps {
            self.physics_step(&targets, &rates);
        }
        let b = self.body;
        if ![b.x, b.z, b.pitch, b.vx, b.vz, b.pitch_rate].iter().all(|v| v.is_finite()) {
            return Err(Error::Simulation {
                time: b.time,
                reason: "non-finite body state".into(),
            });
        }
        let speed = (b.x - x0) / control_dt;
        let task = &self.cfg.task;
        let target_speed = speed_profile(b.time, task);
        let fell = fall_check(&b, &self.cfg.model);
        let timeout = b.time >= task.episode_length - 0.5 * self.cfg.physics_dt;
        Ok(QuadStep {
            imu: [0.0, b.pitch, 0.0, b.pitch_rate],
            reward: track_reward(speed, target_speed, task.v_max),
            done: fell || timeout,
            fell,
            speed,
            target_speed,
        })
    }

    /// Translational, rotational and gravitational energy of the body.
    pub fn mechanical_energy(&self) -> f64 {
        let b = &self.body;
        let m = &self.cfg.model;
        0.5 * m.mass * (b.vx * b.vx + b.vz * b.vz)
            + 0.5 * m.pitch_inertia * b.pitch_rate * b.pitch_rate
            + m.mass * self.cfg.gravity * b.z
    }
}

/// Quadruped simulator wired to a policy.
#[derive(Clone, Debug)]
pub struct QuadrupedTask {
    sim: Simulator,
    tg_cfg: TgConfig,
    bounds: ActionBounds,
    wiring: Wiring,
    tg: TgState,
    modulation: TgModulation,
    command: LegCommand,
    last: Option<QuadStep>,
    window: VecDeque<(f64, f64)>,
    window_sum: (f64, f64),
    abs_error_sum: f64,
    steps: usize,
    fell: bool,
}

impl QuadrupedTask {
    pub fn new(cfg: QuadrupedConfig, tg_cfg: TgConfig, bounds: ActionBounds, wiring: Wiring) -> Result<Self> {
        tg_cfg.validate()?;
        bounds.validate()?;
        let sim = Simulator::new(cfg, tg_cfg.dt)?;
        Ok(Self {
            sim,
            modulation: bounds.midpoint_modulation(),
            tg_cfg,
            bounds,
            wiring,
            tg: TgState::default(),
            command: LegCommand::default(),
            last: None,
            window: VecDeque::new(),
            window_sum: (0.0, 0.0),
            abs_error_sum: 0.0,
            steps: 0,
            fell: false,
        })
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn tg_state(&self) -> TgState {
        self.tg
    }

    pub fn modulation(&self) -> TgModulation {
        self.modulation
    }

    pub fn last_step(&self) -> Option<&QuadStep> {
        self.last.as_ref()
    }

    fn record_tracking(&mut self, speed: f64, target: f64) {
        let width = (self.sim.config().task.tracking_window / self.tg_cfg.dt).round().max(1.0) as usize;
        self.window.push_back((speed, target));
        self.window_sum.0 += speed;
        self.window_sum.1 += target;
        if self.window.len() > width {
            let (v, t) = self.window.pop_front().expect("window is non-empty");
            self.window_sum.0 -= v;
            self.window_sum.1 -= t;
        }
        let n = self.window.len() as f64;
        self.abs_error_sum += ((self.window_sum.0 - self.window_sum.1) / n).abs();
    }

    fn target_speed(&self) -> f64 {
        speed_profile(self.sim.body().time, &self.sim.config().task)
    }

    fn observe(&self) -> Result<Vec<f64>> {
        let b = self.sim.body();
        let imu = [0.0, b.pitch, 0.0, b.pitch_rate];
        let v = self.target_speed();
        Ok(match self.wiring {
            Wiring::Pmtg | Wiring::VanillaTime => assemble_observation(imu, v, self.tg.phase)?.0.to_vec(),
            Wiring::Vanilla => {
                ensure_finite("observation", &imu)?;
                vec![imu[0], imu[1], imu[2], imu[3], v]
            }
        })
    }
}

impl ControlTask for QuadrupedTask {
    fn obs_dim(&self) -> usize {
        match self.wiring {
            Wiring::Pmtg | Wiring::VanillaTime => crate::policy::OBS_DIM,
            Wiring::Vanilla => 5,
        }
    }

    fn action_dim(&self) -> usize {
        match self.wiring {
            Wiring::Pmtg => crate::policy::ACTION_DIM,
            Wiring::Vanilla | Wiring::VanillaTime => crate::policy::FEEDBACK_CHANNELS,
        }
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        self.sim.reset(seed, self.tg_cfg.swing_center);
        self.tg = TgState::default();
        self.modulation = self.bounds.midpoint_modulation();
        self.command = *self.sim.servo();
        self.last = None;
        self.window.clear();
        self.window_sum = (0.0, 0.0);
        self.abs_error_sum = 0.0;
        self.steps = 0;
        self.fell = false;
        self.observe()
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
        let limits = self.sim.config().model.actuator_limits;
        let frequency = match self.wiring {
            Wiring::Pmtg => {
                let bundle = split_and_squash(raw, &self.bounds)?;
                self.modulation = bundle.tg_mod;
                let u_tg = tg_leg_targets(self.tg, &bundle.tg_mod, &self.tg_cfg)?;
                self.command = compose_action(&u_tg, &bundle.feedback, &limits);
                bundle.tg_mod.frequency
            }
            Wiring::Vanilla | Wiring::VanillaTime => {
                ensure_finite("raw action", raw)?;
                let mut cmd = LegCommand::default();
                for (leg, r) in cmd.legs.iter_mut().zip(raw.chunks_exact(2)) {
                    leg.swing = squash(r[0], limits.swing);
                    leg.extension = squash(r[1], limits.extension);
                }
                self.command = cmd;
                // the clock of the timed variant runs at the midpoint frequency
                self.bounds.frequency.mid()
            }
        };
        let out = self.sim.step(&self.command)?;
        self.tg = advance_phase(self.tg, frequency, self.tg_cfg.dt)?;
        self.record_tracking(out.speed, out.target_speed);
        self.steps += 1;
        self.fell |= out.fell;
        self.last = Some(out);
        Ok((
            self.observe()?,
            StepOutcome {
                reward: out.reward,
                done: out.done,
            },
        ))
    }

    fn trace_header(&self) -> &'static [&'static str] {
        &[
            "t", "v_target", "v_robot", "pitch", "f_tg", "alpha_tg", "h_tg", "swing_fl", "swing_fr", "swing_bl",
            "swing_br", "ext_fl", "ext_fr", "ext_bl", "ext_br",
        ]
    }

    fn trace_row(&self) -> Vec<f64> {
        let b = self.sim.body();
        let (v_t, v_r) = self.last.map_or((0.0, 0.0), |s| (s.target_speed, s.speed));
        let mut row = vec![b.time, v_t, v_r, b.pitch];
        match self.wiring {
            Wiring::Pmtg => row.extend([
                self.modulation.frequency,
                self.modulation.swing_amplitude,
                self.modulation.walking_height,
            ]),
            _ => row.extend([f64::NAN; TG_CHANNELS]),
        }
        row.extend(self.command.legs.iter().map(|l| l.swing));
        row.extend(self.command.legs.iter().map(|l| l.extension));
        row
    }

    fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            tracking_error: (self.steps > 0).then(|| self.abs_error_sum / self.steps as f64),
            fell: self.fell,
            duration: self.sim.body().time,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tg::{gait_table, Gait};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_6, PI};

    fn quiet() -> QuadrupedConfig {
        let mut cfg = QuadrupedConfig {
            reset_noise: 0.0,
            ..QuadrupedConfig::default()
        };
        cfg.task.perturbations.enabled = false;
        cfg
    }

    fn standing(model: &RobotModel) -> LegCommand {
        LegCommand {
            legs: [LegPose {
                swing: 0.0,
                extension: model.extension_ref,
            }; NUM_LEGS],
        }
    }

    fn walk_task(cfg: QuadrupedConfig) -> QuadrupedTask {
        QuadrupedTask::new(cfg, gait_table(Gait::Walk), ActionBounds::default(), Wiring::Pmtg).unwrap()
    }

    #[test]
    fn track_reward_examples() {
        assert_abs_diff_eq!(track_reward(0.4, 0.4, 0.4), 0.4, epsilon = 1e-9);
        assert_abs_diff_eq!(track_reward(0.0, 0.4, 0.4), 0.242612, epsilon = 1e-6);
        assert_abs_diff_eq!(track_reward(0.0, 0.4, 0.4), 0.4 * (-0.5f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(track_reward(0.4, 0.48, 0.4), 0.392079, epsilon = 1e-6);
        assert!(track_reward(0.4, 0.48, 0.4) >= 0.98 * 0.4);
    }

    #[test]
    fn speed_profile_examples() {
        let task = TaskSpec::default();
        assert_eq!(speed_profile(0.0, &task), 0.0);
        assert_eq!(speed_profile(0.6 * task.episode_length, &task), task.v_max);
        assert_abs_diff_eq!(speed_profile(task.episode_length, &task), 0.0, epsilon = 1e-12);
        // halfway up the ramp
        let t = 0.325 * task.episode_length;
        assert_abs_diff_eq!(speed_profile(t, &task), 0.5 * task.v_max, epsilon = 1e-12);
    }

    #[test]
    fn fall_check_examples() {
        let model = RobotModel::default();
        let upright = BodyState {
            z: model.leg_length,
            ..BodyState::default()
        };
        assert!(!fall_check(&upright, &model));
        assert!(fall_check(&BodyState { pitch: PI / 2.0, ..upright }, &model));
        assert!(fall_check(&BodyState { pitch: -0.81, ..upright }, &model));
        assert!(fall_check(&BodyState { z: 0.1 * model.leg_length, ..upright }, &model));
    }

    #[test]
    fn foot_kinematics_examples() {
        let model = RobotModel::default();
        let body = BodyState {
            z: 0.25,
            ..BodyState::default()
        };
        let e = model.extension_ref;
        let (x, z) = foot_kinematics(&body, 0, 0.0, e, &model).unwrap();
        assert_abs_diff_eq!(x, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(z, 0.0, epsilon = 1e-12);

        let (x, z) = foot_kinematics(&body, 0, FRAC_PI_6, e, &model).unwrap();
        assert_abs_diff_eq!(x, 0.325, epsilon = 1e-9);
        assert_abs_diff_eq!(z, 0.033494, epsilon = 1e-6);
        // geometric oracle: hip plus a leg of length l at angle S from straight down
        assert_abs_diff_eq!(x, 0.2 + 0.25 * FRAC_PI_6.sin(), epsilon = 1e-12);
        assert_abs_diff_eq!(z, 0.25 - 0.25 * FRAC_PI_6.cos(), epsilon = 1e-12);

        // longer extension means a longer leg
        let (_, z_long) = foot_kinematics(&body, 0, 0.0, e + 0.5, &model).unwrap();
        assert_abs_diff_eq!(z_long, -model.extension_gain * 0.5, epsilon = 1e-12);

        assert!(foot_kinematics(&body, 0, 0.0, e - 3.0, &model).is_err());
    }

    #[test]
    fn pitch_by_pi_mirrors_foot_through_hip() {
        let model = RobotModel::default();
        let flat = BodyState {
            x: 0.3,
            z: 0.5,
            ..BodyState::default()
        };
        let flipped = BodyState { pitch: PI, ..flat };
        for leg in 0..NUM_LEGS {
            let (hx0, hz0) = hip_position(&flat, leg, &model);
            let (fx0, fz0) = foot_kinematics(&flat, leg, 0.4, 1.0, &model).unwrap();
            let (hx1, hz1) = hip_position(&flipped, leg, &model);
            let (fx1, fz1) = foot_kinematics(&flipped, leg, 0.4, 1.0, &model).unwrap();
            assert_abs_diff_eq!(fx1 - hx1, -(fx0 - hx0), epsilon = 1e-12);
            assert_abs_diff_eq!(fz1 - hz1, -(fz0 - hz0), epsilon = 1e-12);
        }
    }

    #[test]
    fn reset_examples() {
        let mut sim = Simulator::new(quiet(), 0.01).unwrap();
        let b = sim.reset(3, 0.0);
        assert_eq!((b.vx, b.vz, b.pitch), (0.0, 0.0, 0.0));
        assert_abs_diff_eq!(b.z, 0.25, epsilon = 1e-12);

        let mut noisy = Simulator::new(QuadrupedConfig::default(), 0.01).unwrap();
        let a = noisy.reset(11, 0.0);
        let again = noisy.reset(11, 0.0);
        assert_eq!(a, again);
        assert!(a.z <= 0.25);
        assert_ne!(noisy.reset(12, 0.0), a);
    }

    #[test]
    fn free_fall_is_ballistic() {
        let cfg = quiet();
        let g = cfg.gravity;
        let dt = cfg.physics_dt;
        let mut sim = Simulator::new(cfg, dt).unwrap();
        sim.set_body(BodyState {
            z: 10.0,
            vz: 0.5,
            ..BodyState::default()
        });
        let hold = standing(&sim.config().model);
        sim.set_servo(hold);
        for _ in 0..50 {
            let before = sim.body().vz;
            sim.step(&hold).unwrap();
            assert_abs_diff_eq!(sim.body().vz, before - g * dt, epsilon = 1e-12);
            assert_eq!(sim.normal_forces(), [0.0; NUM_LEGS]);
        }
    }

    #[test]
    fn airborne_energy_drift_is_small() {
        let mut sim = Simulator::new(quiet(), 0.01).unwrap();
        sim.set_body(BodyState {
            z: 10.0,
            vx: 0.3,
            pitch_rate: 0.5,
            ..BodyState::default()
        });
        let hold = standing(&sim.config().model);
        sim.set_servo(hold);
        let e0 = sim.mechanical_energy();
        for _ in 0..100 {
            sim.step(&hold).unwrap();
        }
        assert!(sim.normal_forces().iter().all(|f| *f == 0.0));
        let drift = (sim.mechanical_energy() - e0).abs() / e0.abs();
        assert!(drift < 1e-3, "drift {drift} over one second");
    }

    #[test]
    fn standing_robot_settles_to_static_equilibrium() {
        let mut sim = Simulator::new(quiet(), 0.01).unwrap();
        sim.reset(0, 0.0);
        let hold = standing(&sim.config().model);
        for _ in 0..1000 {
            let out = sim.step(&hold).unwrap();
            assert!(!out.done);
        }
        let (fx, fz) = sim.net_force();
        assert!(fx.abs() < 1e-6 && fz.abs() < 1e-6, "net force ({fx}, {fz})");
        let out = sim.step(&hold).unwrap();
        assert_abs_diff_eq!(out.speed, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(
            out.reward,
            track_reward(0.0, out.target_speed, sim.config().task.v_max),
            epsilon = 1e-9
        );
    }

    #[test]
    fn zero_amplitude_generator_stands_for_a_whole_episode() {
        let mut tg = gait_table(Gait::Walk);
        tg.extension_amplitude = 0.0;
        let bounds = ActionBounds {
            swing_amplitude: crate::policy::Interval::new(-0.1, 0.1),
            walking_height: crate::policy::Interval::new(1.0, 1.4),
            ..ActionBounds::default()
        };
        let mut task = QuadrupedTask::new(quiet(), tg, bounds, Wiring::Pmtg).unwrap();
        task.reset(0).unwrap();
        let mut steps = 0;
        loop {
            let (_, out) = task.step(&[0.0; 11]).unwrap();
            steps += 1;
            if out.done {
                break;
            }
        }
        assert!(!task.summary().fell);
        assert_eq!(steps, 2500);
    }

    #[test]
    fn perturbation_examples() {
        let task = TaskSpec::default();
        let pushes = perturbation_schedule(5, &task);
        assert_eq!(pushes.len(), 4);
        assert_eq!(pushes, perturbation_schedule(5, &task));
        assert_ne!(pushes, perturbation_schedule(6, &task));
        for p in &pushes {
            assert!(p.fx.abs() <= 10.0 && p.fz.abs() <= 60.0);
            assert_eq!(p.duration, 0.2);
            assert!(p.start >= 0.0 && p.start + p.duration <= task.episode_length);
        }
        let quiet_time = (0..2500)
            .map(|k| k as f64 * 0.01)
            .find(|t| pushes.iter().all(|p| *t < p.start || *t >= p.start + p.duration))
            .unwrap();
        assert_eq!(perturbation_force(quiet_time, &pushes), (0.0, 0.0));
        let first = pushes[0];
        let (fx, fz) = perturbation_force(first.start + 0.1, &[first]);
        assert_eq!((fx, fz), (first.fx, first.fz));

        let off = TaskSpec {
            perturbations: PerturbationSchedule {
                enabled: false,
                ..PerturbationSchedule::default()
            },
            ..TaskSpec::default()
        };
        assert!(perturbation_schedule(5, &off).is_empty());
    }

    #[test]
    fn walking_is_deterministic_per_seed() {
        let run = |seed| {
            let mut task = walk_task(QuadrupedConfig::default());
            task.reset(seed).unwrap();
            (0..300).map(|_| task.step(&[0.1; 11]).unwrap().0).collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn tracking_error_uses_windowed_speeds() {
        let mut task = walk_task(quiet());
        task.reset(0).unwrap();
        let mut speeds = Vec::new();
        for _ in 0..400 {
            task.step(&[0.0; 11]).unwrap();
            let s = task.last_step().unwrap();
            speeds.push((s.speed, s.target_speed));
        }
        // independent recomputation of the trailing-window mean error
        let w = 100;
        let mut total = 0.0;
        for k in 0..speeds.len() {
            let from = (k + 1).saturating_sub(w);
            let win = &speeds[from..=k];
            let n = win.len() as f64;
            let v: f64 = win.iter().map(|p| p.0).sum::<f64>() / n;
            let t: f64 = win.iter().map(|p| p.1).sum::<f64>() / n;
            total += (v - t).abs();
        }
        let expected = total / speeds.len() as f64;
        assert_abs_diff_eq!(task.summary().tracking_error.unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn wiring_dimensions() {
        let cfg = QuadrupedConfig::default();
        for (wiring, obs, act) in [(Wiring::Pmtg, 7, 11), (Wiring::Vanilla, 5, 8), (Wiring::VanillaTime, 7, 8)] {
            let mut task = QuadrupedTask::new(cfg.clone(), gait_table(Gait::Walk), ActionBounds::default(), wiring).unwrap();
            assert_eq!((task.obs_dim(), task.action_dim()), (obs, act));
            assert_eq!(task.reset(0).unwrap().len(), obs);
            assert!(task.step(&vec![0.0; act + 1]).is_err());
            let (o, _) = task.step(&vec![0.0; act]).unwrap();
            assert_eq!(o.len(), obs);
            assert_eq!(task.trace_row().len(), task.trace_header().len());
        }
    }

    #[test]
    fn observation_carries_pitch_target_speed_and_phase() {
        let mut task = walk_task(quiet());
        let o = task.reset(0).unwrap();
        assert_eq!(o, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        for _ in 0..600 {
            task.step(&[0.0; 11]).unwrap();
        }
        let b = *task.simulator().body();
        let o = task.step(&[0.0; 11]).unwrap().0;
        let b2 = *task.simulator().body();
        assert_ne!(b, b2);
        assert_eq!(o[0], 0.0);
        assert_eq!(o[1], b2.pitch);
        assert_eq!(o[2], 0.0);
        assert_eq!(o[3], b2.pitch_rate);
        assert_eq!(o[4], speed_profile(b2.time, &task.simulator().config().task));
        let [s, c] = task.tg_state().encoding();
        assert_eq!((o[5], o[6]), (s, c));
    }

    #[test]
    fn config_validation() {
        assert!(QuadrupedConfig::default().validate().is_ok());
        let mut bad = QuadrupedConfig::default();
        bad.model.mass = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = QuadrupedConfig::default();
        bad.task.profile_breakpoints = [0.5, 0.4, 0.7];
        assert!(bad.validate().is_err());
        let mut bad = QuadrupedConfig::default();
        bad.contact.friction = -1.0;
        assert!(bad.validate().is_err());
        assert!(Simulator::new(QuadrupedConfig::default(), 0.0105).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn contact_forces_respect_friction_cone(seed in 0u64..1000, raw in proptest::collection::vec(-2.0f64..2.0, 11)) {
            let mut task = walk_task(QuadrupedConfig::default());
            task.reset(seed).unwrap();
            let mu = task.simulator().config().contact.friction;
            for _ in 0..150 {
                let (_, out) = task.step(&raw).unwrap();
                let sim = task.simulator();
                for (n, t) in sim.normal_forces().iter().zip(sim.tangential_forces()) {
                    prop_assert!(*n >= 0.0);
                    prop_assert!(t.abs() <= mu * n + 1e-9);
                }
                if out.done {
                    break;
                }
            }
        }

        #[test]
        fn reward_is_positive_bounded_and_decreasing(err_a in 0.0f64..2.0, err_b in 0.0f64..2.0, v_max in 0.1f64..1.0) {
            let ra = track_reward(0.3 + err_a, 0.3, v_max);
            let rb = track_reward(0.3 - err_b, 0.3, v_max);
            prop_assert!(ra > 0.0 && ra <= v_max);
            prop_assert!(rb > 0.0 && rb <= v_max);
            if err_a < err_b {
                prop_assert!(ra >= rb);
            }
        }

        #[test]
        fn pushes_stay_within_bounds(seed in any::<u64>()) {
            let task = TaskSpec::default();
            for p in perturbation_schedule(seed, &task) {
                prop_assert!(p.fx.abs() <= task.perturbations.max_horizontal);
                prop_assert!(p.fz.abs() <= task.perturbations.max_vertical);
            }
        }
    }
}
