//! Feed-forward policies and the glue between their raw output and the
//! trajectory generator.
//!
//! Parameters live in one flat vector so the optimizers can treat a policy
//! as a point in `R^n`. Layouts:
//!
//! * linear: `W` (`out x in`, row-major), then `b` (`out`) if biased;
//! * mlp: for each layer in order, `W` (row-major) followed by `b`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::tg::{Gait, LegCommand, TgModulation, NUM_LEGS};

pub const OBS_DIM: usize = 7;
pub const ACTION_DIM: usize = 11;
pub const TG_CHANNELS: usize = 3;
pub const FEEDBACK_CHANNELS: usize = 2 * NUM_LEGS;
pub const MAX_HIDDEN: usize = 200;

/// `[roll, pitch, roll_rate, pitch_rate, v_des, sin φ, cos φ]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn assemble_observation(imu: [f64; 4], v_des: f64, phase: f64) -> Result<Observation> {
    ensure_finite("observation", &imu)?;
    ensure_finite("observation", &[v_des, phase])?;
    let (s, c) = phase.sin_cos();
    Ok(Observation([imu[0], imu[1], imu[2], imu[3], v_des, s, c]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Linear,
    Mlp,
}

/// Shape of a policy network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub kind: PolicyKind,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Hidden layer widths; empty for linear policies.
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Whether a linear policy carries an output bias. MLPs always do.
    #[serde(default)]
    pub bias: bool,
}

impl PolicyShape {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            kind: PolicyKind::Linear,
            input_dim,
            output_dim,
            hidden: Vec::new(),
            bias: false,
        }
    }

    pub fn mlp(input_dim: usize, hidden: [usize; 2], output_dim: usize) -> Self {
        Self {
            kind: PolicyKind::Mlp,
            input_dim,
            output_dim,
            hidden: hidden.to_vec(),
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Shape(format!("empty policy dimensions in {self}")));
        }
        match self.kind {
            PolicyKind::Linear if !self.hidden.is_empty() => {
                Err(Error::Shape("linear policies take no hidden layers".into()))
            }
            PolicyKind::Mlp if self.hidden.len() != 2 => Err(Error::Shape(format!(
                "mlp policies have exactly two hidden layers, got {}",
                self.hidden.len()
            ))),
            PolicyKind::Mlp if self.hidden.iter().any(|&h| h == 0 || h > MAX_HIDDEN) => {
                Err(Error::Shape(format!(
                    "hidden widths must lie in 1..={MAX_HIDDEN}, got {:?}",
                    self.hidden
                )))
            }
            _ => Ok(()),
        }
    }

    /// `(fan_in, fan_out)` of each dense layer.
    fn layers(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn has_bias(&self) -> bool {
        self.kind == PolicyKind::Mlp || self.bias
    }

    pub fn param_count(&self) -> usize {
        let bias = self.has_bias();
        self.layers()
            .iter()
            .map(|&(i, o)| i * o + if bias { o } else { 0 })
            .sum()
    }
}

impl std::fmt::Display for PolicyShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            PolicyKind::Linear => "linear",
            PolicyKind::Mlp => "mlp",
        };
        write!(f, "{kind} {}", self.input_dim)?;
        for h in &self.hidden {
            write!(f, "->{h}")?;
        }
        write!(f, "->{}", self.output_dim)?;
        if self.kind == PolicyKind::Linear && self.bias {
            write!(f, " +bias")?;
        }
        Ok(())
    }
}

pub fn param_count(shape: &PolicyShape) -> usize {
    shape.param_count()
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    /// Input to each layer (the observation, then post-ReLU hidden values).
    inputs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub shape: PolicyShape,
    pub flat: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Result<Self> {
        shape.validate()?;
        let n = shape.param_count();
        Ok(Self {
            shape,
            flat: vec![0.0; n],
        })
    }

    pub fn from_flat(shape: PolicyShape, flat: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if flat.len() != shape.param_count() {
            return Err(Error::Shape(format!(
                "{shape} needs {} parameters, got {}",
                shape.param_count(),
                flat.len()
            )));
        }
        Ok(Self { shape, flat })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: rand::Rng>(shape: PolicyShape, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        let bias = p.shape.has_bias();
        let mut at = 0;
        for (fan_in, fan_out) in p.shape.layers() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut p.flat[at..at + fan_in * fan_out] {
                *w = rng.gen_range(-limit..limit);
            }
            at += fan_in * fan_out + if bias { fan_out } else { 0 };
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn forward(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.forward_cached(obs).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, obs: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if obs.len() != self.shape.input_dim {
            return Err(Error::Shape(format!(
                "policy {} got an observation of length {}",
                self.shape,
                obs.len()
            )));
        }
        let bias = self.shape.has_bias();
        let layers = self.shape.layers();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(layers.len()),
        };
        let mut x = obs.to_vec();
        let mut at = 0;
        for (li, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let w = &self.flat[at..at + fan_in * fan_out];
            at += fan_in * fan_out;
            let mut y: Vec<f64> = w.chunks_exact(fan_in).map(|row| dot(row, &x)).collect();
            if bias {
                for (yi, bi) in y.iter_mut().zip(&self.flat[at..at + fan_out]) {
                    *yi += bi;
                }
                at += fan_out;
            }
            if li + 1 < layers.len() {
                for v in &mut y {
                    *v = v.max(0.0);
                }
            }
            cache.inputs.push(std::mem::replace(&mut x, y));
        }
        Ok((x, cache))
    }

    /// Accumulate `∂L/∂θ` into `grad` given `∂L/∂output` for one forward pass.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.flat.len());
        let bias = self.shape.has_bias();
        let layers = self.shape.layers();
        // start offset of each layer's weights
        let mut offsets = Vec::with_capacity(layers.len());
        let mut at = 0;
        for &(i, o) in &layers {
            offsets.push(at);
            at += i * o + if bias { o } else { 0 };
        }
        let mut delta = grad_out.to_vec();
        for li in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[li];
            let x = &cache.inputs[li];
            let w0 = offsets[li];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[w0 + o * fan_in..w0 + (o + 1) * fan_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if bias {
                let b0 = w0 + fan_in * fan_out;
                for (g, d) in grad[b0..b0 + fan_out].iter_mut().zip(&delta) {
                    *g += d;
                }
            }
            if li > 0 {
                let w = &self.flat[w0..w0 + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for (o, row) in w.chunks_exact(fan_in).enumerate() {
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += delta[o] * wi;
                    }
                }
                // ReLU gate: the cached input of this layer is the previous layer's output
                for (p, xi) in prev.iter_mut().zip(x) {
                    if *xi <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Closed interval a channel is squashed into.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn symmetric(r: f64) -> Self {
        Self { lo: -r, hi: r }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{name}: need finite lo < hi, got [{}, {}]",
                self.lo, self.hi
            )))
        }
    }
}

/// Smooth, strictly monotone map from `R` onto `(lo, hi)`; `0` maps to the midpoint.
pub fn squash(raw: f64, range: Interval) -> f64 {
    range.mid() + 0.5 * (range.hi - range.lo) * raw.tanh()
}

/// Inverse of [`squash`] on the open interval.
pub fn unsquash(x: f64, range: Interval) -> f64 {
    (2.0 * (x - range.lo) / (range.hi - range.lo) - 1.0).atanh()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionBounds {
    pub frequency: Interval,
    pub swing_amplitude: Interval,
    pub walking_height: Interval,
    /// Leg corrections are squashed into `[-feedback_range, feedback_range]`.
    pub feedback_range: f64,
}

impl Default for ActionBounds {
    fn default() -> Self {
        Self {
            frequency: Interval::new(0.0, 3.0),
            swing_amplitude: Interval::new(0.0, 0.6),
            walking_height: Interval::new(0.8, 1.6),
            feedback_range: 0.3,
        }
    }
}

impl ActionBounds {
    /// Default modulation ranges for a gait. Bounding is the fast gait, so
    /// its frequency and stride ranges sit higher.
    pub fn for_gait(gait: Gait) -> Self {
        match gait {
            Gait::Walk => Self::default(),
            Gait::Bound => Self {
                frequency: Interval::new(1.0, 3.0),
                swing_amplitude: Interval::new(0.4, 0.7),
                ..Self::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.frequency.validate("bounds.frequency")?;
        self.swing_amplitude.validate("bounds.swing_amplitude")?;
        self.walking_height.validate("bounds.walking_height")?;
        if self.frequency.lo < 0.0 {
            return Err(Error::Config("bounds.frequency.lo must be >= 0".into()));
        }
        if !(self.feedback_range > 0.0 && self.feedback_range.is_finite()) {
            return Err(Error::Config("bounds.feedback_range must be positive".into()));
        }
        Ok(())
    }

    pub fn midpoint_modulation(&self) -> TgModulation {
        TgModulation {
            frequency: self.frequency.mid(),
            swing_amplitude: self.swing_amplitude.mid(),
            walking_height: self.walking_height.mid(),
        }
    }

    pub fn contains(&self, m: &TgModulation) -> bool {
        self.frequency.contains(m.frequency)
            && self.swing_amplitude.contains(m.swing_amplitude)
            && self.walking_height.contains(m.walking_height)
    }
}

/// Policy output split into generator modulation and per-leg corrections.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionBundle {
    pub tg_mod: TgModulation,
    pub feedback: [f64; FEEDBACK_CHANNELS],
}

pub fn split_and_squash(raw: &[f64], bounds: &ActionBounds) -> Result<ActionBundle> {
    if raw.len() != ACTION_DIM {
        return Err(Error::Shape(format!(
            "expected {ACTION_DIM} raw actions, got {}",
            raw.len()
        )));
    }
    ensure_finite("raw action", raw)?;
    let fb = Interval::symmetric(bounds.feedback_range);
    let mut feedback = [0.0; FEEDBACK_CHANNELS];
    for (out, &r) in feedback.iter_mut().zip(&raw[TG_CHANNELS..]) {
        *out = squash(r, fb);
    }
    Ok(ActionBundle {
        tg_mod: TgModulation {
            frequency: squash(raw[0], bounds.frequency),
            swing_amplitude: squash(raw[1], bounds.swing_amplitude),
            walking_height: squash(raw[2], bounds.walking_height),
        },
        feedback,
    })
}

/// Servo position limits applied after summing generator output and corrections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorLimits {
    pub swing: Interval,
    pub extension: Interval,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        Self {
            swing: Interval::new(-1.0, 1.0),
            extension: Interval::new(0.4, 2.0),
        }
    }
}

impl ActuatorLimits {
    pub fn validate(&self) -> Result<()> {
        self.swing.validate("actuator_limits.swing")?;
        self.extension.validate("actuator_limits.extension")
    }

    pub fn clamp(&self, cmd: &LegCommand) -> LegCommand {
        let mut out = *cmd;
        for leg in &mut out.legs {
            leg.swing = self.swing.clamp(leg.swing);
            leg.extension = self.extension.clamp(leg.extension);
        }
        out
    }

    pub fn contains(&self, cmd: &LegCommand) -> bool {
        cmd.legs
            .iter()
            .all(|l| self.swing.contains(l.swing) && self.extension.contains(l.extension))
    }
}

/// `u = u_tg + u_fb`, clamped to the actuator limits.
pub fn compose_action(u_tg: &LegCommand, u_fb: &[f64; FEEDBACK_CHANNELS], limits: &ActuatorLimits) -> LegCommand {
    let mut sum = *u_tg;
    for (leg, fb) in sum.legs.iter_mut().zip(u_fb.chunks_exact(2)) {
        leg.swing += fb[0];
        leg.extension += fb[1];
    }
    limits.clamp(&sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn observation_examples() {
        let o = assemble_observation([0.0; 4], 0.0, 0.0).unwrap();
        assert_eq!(o.0, [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let o = assemble_observation([0.1, -0.2, 0.0, 0.0], 0.4, FRAC_PI_2).unwrap();
        let want = [0.1, -0.2, 0.0, 0.0, 0.4, 1.0, 0.0];
        for (a, b) in o.0.iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let o = assemble_observation([0.3, 0.2, 0.1, -0.1], 0.7, PI).unwrap();
        assert_abs_diff_eq!(o.0[5], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.0[6], -1.0, epsilon = 1e-12);
        assert!(assemble_observation([f64::NAN, 0.0, 0.0, 0.0], 0.0, 0.0).is_err());
        assert!(assemble_observation([0.0; 4], f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn param_counts() {
        assert_eq!(param_count(&PolicyShape::linear(7, 11)), 77);
        assert_eq!(param_count(&PolicyShape::linear(3, 2)), 6);
        assert_eq!(param_count(&PolicyShape::mlp(7, [32, 32], 11)), 1675);
    }

    #[test]
    fn mlp_count_matches_enumerated_layout() {
        // walk the layout by hand: every slot is touched exactly once
        let shape = PolicyShape::mlp(7, [32, 32], 11);
        let mut slots = 0;
        for (fan_in, fan_out) in [(7, 32), (32, 32), (32, 11)] {
            for _row in 0..fan_out {
                for _col in 0..fan_in {
                    slots += 1;
                }
            }
            slots += fan_out;
        }
        assert_eq!(slots, shape.param_count());
    }

    #[test]
    fn shape_validation() {
        assert!(PolicyShape::mlp(7, [201, 32], 11).validate().is_err());
        assert!(PolicyShape::mlp(7, [200, 200], 11).validate().is_ok());
        let mut s = PolicyShape::linear(7, 11);
        s.hidden = vec![3];
        assert!(s.validate().is_err());
    }

    #[test]
    fn forward_examples() {
        let p = PolicyParams::zeros(PolicyShape::linear(7, 11)).unwrap();
        assert_eq!(p.forward(&[1.0; 7]).unwrap(), vec![0.0; 11]);

        let p = PolicyParams::from_flat(PolicyShape::linear(7, 11), vec![0.1; 77]).unwrap();
        for y in p.forward(&[1.0; 7]).unwrap() {
            assert_abs_diff_eq!(y, 0.7, epsilon = 1e-12);
        }

        // zero hidden weights: output equals output bias
        let shape = PolicyShape::mlp(7, [4, 5], 3);
        let mut p = PolicyParams::zeros(shape).unwrap();
        let n = p.len();
        p.flat[n - 3..].copy_from_slice(&[0.5, -1.0, 2.0]);
        assert_eq!(p.forward(&[0.3; 7]).unwrap(), vec![0.5, -1.0, 2.0]);

        assert!(matches!(p.forward(&[0.0; 6]), Err(Error::Shape(_))));
    }

    #[test]
    fn linear_row_major_layout() {
        let shape = PolicyShape::linear(3, 2);
        let p = PolicyParams::from_flat(shape, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(p.forward(&[1.0, 0.0, -1.0]).unwrap(), vec![-2.0, -2.0]);
        let mut shape = PolicyShape::linear(3, 2);
        shape.bias = true;
        let p = PolicyParams::from_flat(shape, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.5, -0.5]).unwrap();
        assert_eq!(p.forward(&[1.0, 0.0, -1.0]).unwrap(), vec![-1.5, -2.5]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut shape = PolicyShape::mlp(4, [5, 6], 3);
        for _ in 0..2 {
            let mut p = PolicyParams::glorot(shape.clone(), &mut rng).unwrap();
            for b in p.flat.iter_mut() {
                *b += rng.gen_range(-0.1..0.1);
            }
            let obs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let gout = [0.3, -1.2, 0.7];
            let loss = |q: &PolicyParams| dot(&q.forward(&obs).unwrap(), &gout);
            let (_, cache) = p.forward_cached(&obs).unwrap();
            let mut grad = vec![0.0; p.len()];
            p.backward(&cache, &gout, &mut grad);
            for i in 0..p.len() {
                let h = 1e-6;
                let mut q = p.clone();
                q.flat[i] += h;
                let up = loss(&q);
                q.flat[i] -= 2.0 * h;
                let down = loss(&q);
                assert_abs_diff_eq!(grad[i], (up - down) / (2.0 * h), epsilon = 1e-7);
            }
            shape = PolicyShape {
                bias: true,
                ..PolicyShape::linear(4, 3)
            };
        }
    }

    #[test]
    fn squash_examples() {
        let b = ActionBounds::default();
        let a = split_and_squash(&[0.0; 11], &b).unwrap();
        assert_abs_diff_eq!(a.tg_mod.frequency, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(a.tg_mod.swing_amplitude, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(a.tg_mod.walking_height, 1.2, epsilon = 1e-12);
        assert_eq!(a.feedback, [0.0; 8]);

        let a = split_and_squash(&[20.0; 11], &b).unwrap();
        for (x, hi) in [
            (a.tg_mod.frequency, 3.0),
            (a.tg_mod.swing_amplitude, 0.6),
            (a.tg_mod.walking_height, 1.6),
            (a.feedback[0], 0.3),
        ] {
            assert!(x <= hi && hi - x <= 1e-6);
        }
        assert!(split_and_squash(&[0.0; 10], &b).is_err());
    }

    /// Bisection inverse of `squash`, independent of `unsquash`.
    fn bisect_inverse(x: f64, range: Interval) -> f64 {
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if squash(m, range) < x {
                lo = m;
            } else {
                hi = m;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn squash_round_trip_against_bisection() {
        let range = Interval::new(0.8, 1.6);
        for i in 1..100 {
            let x = 0.8 + 0.8 * i as f64 / 100.0;
            let raw = bisect_inverse(x, range);
            assert_abs_diff_eq!(unsquash(x, range), raw, epsilon = 1e-9);
            assert_abs_diff_eq!(squash(raw, range), x, epsilon = 1e-12);
        }
    }

    #[test]
    fn compose_examples() {
        let limits = ActuatorLimits::default();
        let mut tg = LegCommand::default();
        for (i, leg) in tg.legs.iter_mut().enumerate() {
            leg.swing = 0.1 * i as f64;
            leg.extension = 1.0 + 0.1 * i as f64;
        }
        assert_eq!(compose_action(&tg, &[0.0; 8], &limits), tg);
        let fb = [0.1, 0.5, -0.2, 0.6, 0.0, 0.7, 0.3, 0.8];
        let from_zero = compose_action(&LegCommand::default(), &fb, &limits);
        assert_eq!(from_zero.to_array(), fb);
        let mut s = LegCommand::default();
        s.legs[0].swing = 0.3;
        let mut fb = [0.0; 8];
        fb[0] = -0.3;
        assert_eq!(compose_action(&s, &fb, &limits).legs[0].swing, 0.0);
        // clamping
        let mut big = LegCommand::default();
        big.legs[1].extension = 5.0;
        assert_eq!(compose_action(&big, &[0.0; 8], &limits).legs[1].extension, 2.0);
    }

    #[test]
    fn gait_bounds_are_valid() {
        for gait in [Gait::Walk, Gait::Bound] {
            ActionBounds::for_gait(gait).validate().unwrap();
        }
        assert_eq!(ActionBounds::for_gait(Gait::Walk), ActionBounds::default());
        let m = ActionBounds::for_gait(Gait::Bound).midpoint_modulation();
        assert_abs_diff_eq!(m.frequency, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.swing_amplitude, 0.55, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn squashed_actions_stay_in_bounds(raw in proptest::collection::vec(-1e3f64..1e3, 11)) {
            let b = ActionBounds::default();
            let a = split_and_squash(&raw, &b).unwrap();
            prop_assert!(b.contains(&a.tg_mod));
            prop_assert!(a.feedback.iter().all(|f| f.abs() <= b.feedback_range));
        }

        #[test]
        fn squash_is_monotone(a in -30.0f64..30.0, d in 1e-6f64..5.0) {
            let r = Interval::new(0.0, 3.0);
            prop_assert!(squash(a, r) <= squash(a + d, r));
        }

        #[test]
        fn linear_forward_is_homogeneous(c in -5.0f64..5.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = PolicyParams::glorot(PolicyShape::linear(7, 11), &mut rng).unwrap();
            let obs: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut scaled = p.clone();
            scaled.flat.iter_mut().for_each(|w| *w *= c);
            let a = p.forward(&obs).unwrap();
            let b = scaled.forward(&obs).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((c * x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn compose_commutes(u in proptest::collection::vec(-0.3f64..0.3, 8), v in proptest::collection::vec(-0.3f64..0.3, 8)) {
            let wide = ActuatorLimits { swing: Interval::new(-10.0, 10.0), extension: Interval::new(-10.0, 10.0) };
            let ua: [f64; 8] = u.clone().try_into().unwrap();
            let va: [f64; 8] = v.clone().try_into().unwrap();
            let a = compose_action(&LegCommand::from_slice(&u).unwrap(), &va, &wide);
            let b = compose_action(&LegCommand::from_slice(&v).unwrap(), &ua, &wide);
            prop_assert_eq!(a, b);
        }
    }
}
