//! Trajectory generators.
//!
//! The leg generator produces a swing/extension pair per leg from a single
//! shared phase. Each leg reads the phase through its gait offset and a
//! piecewise-linear time warp that splits the cycle into a stance half
//! (`t'` in `[0, π)`) and a swing half (`t'` in `[π, 2π)`).
//!
//! The figure-eight generator drives the planar point-mass task.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub const NUM_LEGS: usize = 4;

/// Cycle increment of the figure-eight generator per environment step.
pub const EIGHT_STEP: f64 = 0.01;

/// Wrap an angle into `[0, 2π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Phase of a trajectory generator, the only memory of the controller.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TgState {
    pub phase: f64,
}

impl TgState {
    pub fn new(phase: f64) -> Self {
        Self {
            phase: wrap_angle(phase),
        }
    }

    /// `(sin φ, cos φ)`, the encoding the policy observes.
    pub fn encoding(&self) -> [f64; 2] {
        let (s, c) = self.phase.sin_cos();
        [s, c]
    }

    /// Cycle position in `[0, 1)` for the figure-eight generator.
    pub fn cycle_fraction(&self) -> f64 {
        self.phase / TAU
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gait {
    Walk,
    Bound,
}

impl FromStr for Gait {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "walk" => Ok(Gait::Walk),
            "bound" => Ok(Gait::Bound),
            other => Err(Error::Config(format!(
                "unknown gait `{other}` (expected `walk` or `bound`)"
            ))),
        }
    }
}

impl fmt::Display for Gait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gait::Walk => "walk",
            Gait::Bound => "bound",
        })
    }
}

/// Fixed constants of the leg trajectory generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TgConfig {
    /// Swing center `C_s`, radians.
    pub swing_center: f64,
    /// Extension amplitude `A_e` over the cycle, radians.
    pub extension_amplitude: f64,
    /// Extension difference between end of swing and end of stance, radians.
    pub extension_asymmetry: f64,
    /// Fraction of the cycle spent in swing, `0 < beta < 1`.
    pub beta: f64,
    /// Phase offsets per leg, ordered front-left, front-right, back-left, back-right.
    pub leg_phase_offsets: [f64; NUM_LEGS],
    /// Control period, seconds.
    pub dt: f64,
}

impl TgConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "tg config",
            &[
                self.swing_center,
                self.extension_amplitude,
                self.extension_asymmetry,
                self.beta,
                self.dt,
            ],
        )?;
        check_beta(self.beta)?;
        if self.dt <= 0.0 {
            return Err(Error::Config(format!("tg.dt must be positive, got {}", self.dt)));
        }
        for (i, &off) in self.leg_phase_offsets.iter().enumerate() {
            if !(0.0..TAU).contains(&off) {
                return Err(Error::Config(format!(
                    "leg phase offset {i} = {off} is outside [0, 2π)"
                )));
            }
        }
        if self.leg_phase_offsets[0] != 0.0 {
            return Err(Error::Config(
                "front-left leg is the phase reference and must have offset 0".into(),
            ));
        }
        Ok(())
    }
}

impl Default for TgConfig {
    fn default() -> Self {
        gait_table(Gait::Walk)
    }
}

/// Parameters the policy feeds the leg generator every control step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TgModulation {
    /// Hz.
    pub frequency: f64,
    /// Swing amplitude `α_tg`, radians.
    pub swing_amplitude: f64,
    /// Walking height `h_tg`, radians of extension.
    pub walking_height: f64,
}

impl TgModulation {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "tg modulation",
            &[self.frequency, self.swing_amplitude, self.walking_height],
        )?;
        if self.frequency < 0.0 {
            return Err(Error::Config(format!(
                "tg frequency must be non-negative, got {}",
                self.frequency
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LegPose {
    pub swing: f64,
    pub extension: f64,
}

/// Swing and extension for all four legs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LegCommand {
    pub legs: [LegPose; NUM_LEGS],
}

impl LegCommand {
    /// Interleaved `[S0, E0, S1, E1, ...]`.
    pub fn to_array(&self) -> [f64; 2 * NUM_LEGS] {
        let mut out = [0.0; 2 * NUM_LEGS];
        for (i, leg) in self.legs.iter().enumerate() {
            out[2 * i] = leg.swing;
            out[2 * i + 1] = leg.extension;
        }
        out
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != 2 * NUM_LEGS {
            return Err(Error::Shape(format!(
                "leg command needs {} values, got {}",
                2 * NUM_LEGS,
                values.len()
            )));
        }
        let mut cmd = LegCommand::default();
        for (i, leg) in cmd.legs.iter_mut().enumerate() {
            leg.swing = values[2 * i];
            leg.extension = values[2 * i + 1];
        }
        Ok(cmd)
    }
}

/// `φ ← φ + 2π·f·dt (mod 2π)`.
pub fn advance_phase(state: TgState, frequency: f64, dt: f64) -> Result<TgState> {
    ensure_finite("advance_phase", &[state.phase, frequency, dt])?;
    if frequency < 0.0 || dt <= 0.0 {
        return Err(Error::Config(format!(
            "advance_phase requires f >= 0 and dt > 0 (f={frequency}, dt={dt})"
        )));
    }
    Ok(TgState {
        phase: wrap_angle(state.phase + TAU * frequency * dt),
    })
}

pub fn leg_phase(phase: f64, offset: f64) -> f64 {
    wrap_angle(phase + offset)
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("beta must lie in (0, 1), got {beta}")))
    }
}

/// Time warp from leg phase to generator time `t'`.
///
/// The first `2π(1-β)` of the cycle maps linearly onto `[0, π)` and the
/// remainder onto `[π, 2π)`. The branch boundary maps to `π` from both
/// sides, so the warp is continuous and monotone.
pub fn warp_time(leg_phase: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let phi = wrap_angle(leg_phase);
    let boundary = TAU * (1.0 - beta);
    Ok(if phi < boundary {
        phi / (2.0 * (1.0 - beta))
    } else {
        TAU - (TAU - phi) / (2.0 * beta)
    })
}

/// Open-loop leg targets at the current phase. Does not advance the phase.
pub fn tg_leg_targets(state: TgState, modulation: &TgModulation, cfg: &TgConfig) -> Result<LegCommand> {
    modulation.validate()?;
    let mut cmd = LegCommand::default();
    for (leg, &offset) in cmd.legs.iter_mut().zip(cfg.leg_phase_offsets.iter()) {
        let t = warp_time(leg_phase(state.phase, offset), cfg.beta)?;
        let (s, c) = t.sin_cos();
        leg.swing = cfg.swing_center + modulation.swing_amplitude * c;
        leg.extension = modulation.walking_height + cfg.extension_amplitude * s + cfg.extension_asymmetry * c;
    }
    Ok(cmd)
}

/// `(a_x sin 2πt, (a_y/2) sin 2πt cos 2πt)`.
pub fn figure_eight(t: f64, a_x: f64, a_y: f64) -> (f64, f64) {
    let (s, c) = (TAU * t).sin_cos();
    (a_x * s, 0.5 * a_y * s * c)
}

/// Default generator constants for a gait.
///
/// Bounding swings front and back pairs half a period apart and spends 40%
/// of the cycle in stance. Walking uses the diagonal-pair pattern with equal
/// stance and swing.
pub fn gait_table(gait: Gait) -> TgConfig {
    let (leg_phase_offsets, beta) = match gait {
        Gait::Walk => ([0.0, PI, PI, 0.0], 0.5),
        Gait::Bound => ([0.0, 0.0, PI, PI], 0.6),
    };
    TgConfig {
        swing_center: 0.0,
        extension_amplitude: 0.35,
        extension_asymmetry: 0.0,
        beta,
        leg_phase_offsets,
        dt: 0.01,
    }
}

/// [`gait_table`] by name.
pub fn gait_table_by_name(name: &str) -> Result<TgConfig> {
    name.parse::<Gait>().map(gait_table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    const TOL: f64 = 1e-9;

    #[test]
    fn advance_phase_examples() {
        let p = advance_phase(TgState::new(0.0), 1.0, 0.01).unwrap();
        assert_abs_diff_eq!(p.phase, 0.062831853, epsilon = 1e-9);
        let p = advance_phase(TgState::new(PI), 0.0, 0.01).unwrap();
        assert_abs_diff_eq!(p.phase, PI, epsilon = TOL);
        let p = advance_phase(TgState::new(6.2), 2.0, 0.05).unwrap();
        assert_abs_diff_eq!(p.phase, 6.2 + 0.2 * PI - TAU, epsilon = TOL);
        assert_abs_diff_eq!(p.phase, 0.545_133_223_5, epsilon = TOL);
    }

    #[test]
    fn advance_phase_rejects_bad_input() {
        assert!(matches!(
            advance_phase(TgState::new(0.0), f64::NAN, 0.01),
            Err(Error::NonFinite(_))
        ));
        assert!(advance_phase(TgState::new(0.0), f64::INFINITY, 0.01).is_err());
        assert!(advance_phase(TgState::new(0.0), -1.0, 0.01).is_err());
        assert!(advance_phase(TgState::new(0.0), 1.0, 0.0).is_err());
    }

    #[test]
    fn leg_phase_examples() {
        assert_abs_diff_eq!(leg_phase(1.0, PI), 4.141593, epsilon = 1e-6);
        assert_abs_diff_eq!(leg_phase(2.5, 0.0), 2.5, epsilon = TOL);
        assert_abs_diff_eq!(leg_phase(1.5 * PI, PI), FRAC_PI_2, epsilon = TOL);
    }

    #[test]
    fn warp_time_examples() {
        assert_abs_diff_eq!(warp_time(FRAC_PI_2, 0.5).unwrap(), FRAC_PI_2, epsilon = TOL);
        assert_abs_diff_eq!(warp_time(0.0, 0.3).unwrap(), 0.0, epsilon = TOL);
        assert_abs_diff_eq!(warp_time(1.5 * PI, 0.25).unwrap(), PI, epsilon = TOL);
        // left limit of the boundary agrees
        assert_abs_diff_eq!(warp_time(1.5 * PI - 1e-12, 0.25).unwrap(), PI, epsilon = 1e-9);
    }

    #[test]
    fn warp_time_rejects_bad_beta() {
        for beta in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(warp_time(1.0, beta), Err(Error::Config(_))), "beta={beta}");
        }
    }

    fn bounding_cfg() -> TgConfig {
        TgConfig {
            swing_center: 0.0,
            extension_amplitude: 0.2,
            extension_asymmetry: 0.0,
            beta: 0.5,
            leg_phase_offsets: [0.0, 0.0, PI, PI],
            dt: 0.01,
        }
    }

    #[test]
    fn leg_targets_constants_only() {
        let cfg = TgConfig {
            swing_center: 0.1,
            extension_amplitude: 0.0,
            extension_asymmetry: 0.0,
            ..gait_table(Gait::Walk)
        };
        let m = TgModulation {
            frequency: 1.0,
            swing_amplitude: 0.0,
            walking_height: 1.0,
        };
        for phase in [0.0, 1.0, 3.0, 6.0] {
            let cmd = tg_leg_targets(TgState::new(phase), &m, &cfg).unwrap();
            for leg in cmd.legs {
                assert_abs_diff_eq!(leg.swing, 0.1, epsilon = TOL);
                assert_abs_diff_eq!(leg.extension, 1.0, epsilon = TOL);
            }
        }
    }

    #[test]
    fn leg_targets_bounding_examples() {
        let cfg = bounding_cfg();
        let m = TgModulation {
            frequency: 1.0,
            swing_amplitude: 0.3,
            walking_height: 1.0,
        };
        let cmd = tg_leg_targets(TgState::new(0.0), &m, &cfg).unwrap();
        for leg in &cmd.legs[..2] {
            assert_abs_diff_eq!(leg.swing, 0.3, epsilon = TOL);
            assert_abs_diff_eq!(leg.extension, 1.0, epsilon = TOL);
        }
        for leg in &cmd.legs[2..] {
            assert_abs_diff_eq!(leg.swing, -0.3, epsilon = TOL);
            assert_abs_diff_eq!(leg.extension, 1.0, epsilon = TOL);
        }
        let cmd = tg_leg_targets(TgState::new(FRAC_PI_2), &m, &cfg).unwrap();
        for leg in &cmd.legs[..2] {
            assert_abs_diff_eq!(leg.swing, 0.0, epsilon = TOL);
            assert_abs_diff_eq!(leg.extension, 1.2, epsilon = TOL);
        }
    }

    #[test]
    fn figure_eight_examples() {
        let (x, y) = figure_eight(0.0, 1.0, 1.0);
        assert_abs_diff_eq!(x, 0.0, epsilon = TOL);
        assert_abs_diff_eq!(y, 0.0, epsilon = TOL);
        let (x, y) = figure_eight(0.25, 0.8, 0.6);
        assert_abs_diff_eq!(x, 0.8, epsilon = TOL);
        assert_abs_diff_eq!(y, 0.0, epsilon = TOL);
        let (x, y) = figure_eight(0.125, 1.0, 1.0);
        assert_abs_diff_eq!(x, 0.5f64.sqrt(), epsilon = TOL);
        assert_abs_diff_eq!(y, 0.25, epsilon = TOL);
    }

    #[test]
    fn gait_tables() {
        assert_eq!(gait_table_by_name("bound").unwrap().leg_phase_offsets, [0.0, 0.0, PI, PI]);
        assert_eq!(gait_table_by_name("walk").unwrap().leg_phase_offsets, [0.0, PI, PI, 0.0]);
        assert!(matches!(gait_table_by_name("trot"), Err(Error::Config(_))));
        gait_table(Gait::Walk).validate().unwrap();
        gait_table(Gait::Bound).validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut cfg = gait_table(Gait::Walk);
        cfg.leg_phase_offsets[0] = 0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = gait_table(Gait::Walk);
        cfg.leg_phase_offsets[2] = TAU;
        assert!(cfg.validate().is_err());
        let mut cfg = gait_table(Gait::Walk);
        cfg.beta = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn warp_time_is_identity_at_half() {
        for i in 0..1000 {
            let phi = TAU * i as f64 / 1000.0;
            assert_abs_diff_eq!(warp_time(phi, 0.5).unwrap(), phi, epsilon = 1e-12);
        }
        // and only there
        assert!((warp_time(1.0, 0.4).unwrap() - 1.0).abs() > 1e-3);
    }

    proptest! {
        #[test]
        fn phase_stays_wrapped(phase in -100.0f64..100.0, f in 0.0f64..50.0, dt in 1e-4f64..1.0) {
            let p = advance_phase(TgState::new(phase), f, dt).unwrap().phase;
            prop_assert!((0.0..TAU).contains(&p));
        }

        #[test]
        fn phase_advance_is_additive(phase in 0.0f64..TAU, f in 0.0f64..5.0, n in 1usize..200) {
            let dt = 0.01;
            let mut s = TgState::new(phase);
            for _ in 0..n {
                s = advance_phase(s, f, dt).unwrap();
            }
            let once = advance_phase(TgState::new(phase), f, n as f64 * dt).unwrap();
            let d = (s.phase - once.phase).abs();
            prop_assert!(d.min(TAU - d) < 1e-9);
        }

        #[test]
        fn warp_time_is_monotone(a in 0.0f64..TAU, b in 0.0f64..TAU, beta in 0.05f64..0.95) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(warp_time(lo, beta).unwrap() <= warp_time(hi, beta).unwrap());
        }

        #[test]
        fn zero_amplitudes_are_phase_independent(phase in 0.0f64..TAU, h in 0.5f64..2.0, cs in -0.3f64..0.3) {
            let cfg = TgConfig { swing_center: cs, extension_amplitude: 0.0, extension_asymmetry: 0.0, ..gait_table(Gait::Bound) };
            let m = TgModulation { frequency: 2.0, swing_amplitude: 0.0, walking_height: h };
            let a = tg_leg_targets(TgState::new(phase), &m, &cfg).unwrap();
            let b = tg_leg_targets(TgState::new(0.0), &m, &cfg).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn paired_legs_match(phase in 0.0f64..TAU, amp in 0.0f64..0.6) {
            let cfg = gait_table(Gait::Bound);
            let m = TgModulation { frequency: 2.0, swing_amplitude: amp, walking_height: 1.2 };
            let cmd = tg_leg_targets(TgState::new(phase), &m, &cfg).unwrap();
            prop_assert_eq!(cmd.legs[0], cmd.legs[1]);
            prop_assert_eq!(cmd.legs[2], cmd.legs[3]);
        }

        #[test]
        fn figure_eight_periodic_and_odd(t in -3.0f64..3.0, ax in -2.0f64..2.0, ay in -2.0f64..2.0) {
            let (x0, y0) = figure_eight(t, ax, ay);
            let (x1, y1) = figure_eight(t + 1.0, ax, ay);
            let (x2, y2) = figure_eight(t + 0.5, ax, ay);
            let (x3, y3) = figure_eight(-t, ax, ay);
            prop_assert!((x0 - x1).abs() < 1e-9 && (y0 - y1).abs() < 1e-9);
            prop_assert!((x0 + x3).abs() < 1e-9 && (y0 + y3).abs() < 1e-9);
            // half a cycle later the x lobe flips while y repeats
            prop_assert!((x0 + x2).abs() < 1e-9 && (y0 - y2).abs() < 1e-9);
            prop_assert!(x0.abs() <= ax.abs() + 1e-12 && y0.abs() <= ay.abs() / 4.0 + 1e-12);
        }
    }
}
