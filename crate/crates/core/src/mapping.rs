//! Pilot-to-robot motion mappings.
//!
//! Two modes are supported. In velocity mode the pilot's CoM lean sets the
//! desired wheel speed and their twist sets the desired yaw rate, each through
//! a deadbanded two-slope piecewise-linear curve. In acceleration mode the lean
//! sets a desired body tilt, which is converted into desired acceleration,
//! velocity and position via the small-angle pendulum relation
//! `xdd = -(D / c) * tilt_dd + g * tilt`.

use crate::error::{Error, Result};
use crate::model::RobotParams;

/// Largest force the haptic spring may render, N.
pub const SPRING_FORCE_LIMIT: f64 = 100.0;

/// Hard cap on commanded tilt in acceleration mode, rad.
pub const TILT_SAFETY_CAP: f64 = 0.3;

/// Physical clamp applied to incoming lean, m.
pub const LEAN_LIMIT: f64 = 0.3;

/// Physical clamp applied to incoming twist, rad.
pub const TWIST_LIMIT: f64 = core::f64::consts::FRAC_PI_2;

/// Deadbanded two-slope saturating curve.
///
/// ```text
/// |x| <  deadband           -> 0
/// |x| <  swp                -> sgn(x) * alpha1 * (|x| - deadband)
/// |x| <  max_in             -> sgn(x) * (alpha2 * (|x| - swp) + c_swp)
/// otherwise                 -> sgn(x) * max_out
/// ```
/// `c_swp = alpha1 * (swp - deadband)` and
/// `max_out = alpha2 * (max_in - swp) + c_swp` are derived so the curve is
/// continuous.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct PiecewiseMapConfig {
    pub deadband: f64,
    pub swp: f64,
    pub max_in: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl PiecewiseMapConfig {
    pub fn validate(&self) -> Result<()> {
        let v = [self.deadband, self.swp, self.max_in, self.alpha1, self.alpha2];
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("piecewise map"));
        }
        if !(0.0 <= self.deadband && self.deadband < self.swp && self.swp < self.max_in) {
            return Err(Error::InvalidConfig("require 0 <= deadband < swp < max_in"));
        }
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return Err(Error::InvalidConfig("slopes must be non-negative"));
        }
        Ok(())
    }

    /// Output at the switch point.
    pub fn c_swp(&self) -> f64 {
        self.alpha1 * (self.swp - self.deadband)
    }

    /// Saturated output magnitude.
    pub fn max_out(&self) -> f64 {
        self.alpha2 * (self.max_in - self.swp) + self.c_swp()
    }

    /// Same breakpoints with both slopes (and so every output) scaled.
    pub fn scaled(&self, factor: f64) -> Self {
        PiecewiseMapConfig { alpha1: self.alpha1 * factor, alpha2: self.alpha2 * factor, ..*self }
    }

    pub fn eval(&self, x: f64) -> f64 {
        piecewise_eval(x, self)
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Evaluate the piecewise curve. Odd in `x`.
pub fn piecewise_eval(x: f64, cfg: &PiecewiseMapConfig) -> f64 {
    let mag = x.abs();
    let s = sgn(x);
    if mag < cfg.deadband {
        0.0
    } else if mag < cfg.swp {
        s * cfg.alpha1 * (mag - cfg.deadband)
    } else if mag < cfg.max_in {
        s * cfg.alpha2 * (mag - cfg.swp) + s * cfg.c_swp()
    } else {
        s * cfg.max_out()
    }
}

/// Lean-to-tilt curve for acceleration mode.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct AccelMapConfig {
    /// Pilot tilt deadband, rad.
    pub deadband: f64,
    /// Robot tilt per pilot tilt beyond the deadband.
    pub slope: f64,
    /// Largest commanded robot tilt, rad.
    pub theta_r_max: f64,
}

impl AccelMapConfig {
    /// The pilot's preferred 1.5 degree tilt ceiling.
    pub const PREFERRED_MAX_TILT: f64 = 1.5 * core::f64::consts::PI / 180.0;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MappingMode {
    #[default]
    Velocity,
    Acceleration,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MappingConfig {
    pub mode: MappingMode,
    /// Lean (m) to desired wheel speed (m/s).
    pub vel: PiecewiseMapConfig,
    /// Twist (rad) to desired yaw rate (rad/s).
    pub yaw: PiecewiseMapConfig,
    pub acc: AccelMapConfig,
    /// Pilot's comfortable maximum pitch, rad.
    pub theta_h_max: f64,
    /// Virtual spring stiffness, N/m.
    pub k_spring: f64,
    /// Low-pass cutoff ahead of each tilt derivative in acceleration mode, Hz.
    pub filter_cutoff_hz: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        let theta_h_max = 0.15;
        let acc_deadband = 0.01;
        let theta_r_max = AccelMapConfig::PREFERRED_MAX_TILT;
        MappingConfig {
            mode: MappingMode::Velocity,
            vel: PiecewiseMapConfig { deadband: 0.01, swp: 0.05, max_in: 0.15, alpha1: 2.0, alpha2: 10.0 },
            yaw: PiecewiseMapConfig { deadband: 0.03, swp: 0.15, max_in: 0.5, alpha1: 1.5, alpha2: 4.0 },
            acc: AccelMapConfig {
                deadband: acc_deadband,
                slope: theta_r_max / (theta_h_max - acc_deadband),
                theta_r_max,
            },
            theta_h_max,
            k_spring: 200.0,
            filter_cutoff_hz: 20.0,
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        self.vel.validate()?;
        self.yaw.validate()?;
        let scalars = [
            self.acc.deadband,
            self.acc.slope,
            self.acc.theta_r_max,
            self.theta_h_max,
            self.k_spring,
            self.filter_cutoff_hz,
        ];
        if scalars.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mapping config"));
        }
        if self.acc.theta_r_max <= 0.0 || self.acc.theta_r_max > TILT_SAFETY_CAP {
            return Err(Error::InvalidConfig("theta_r_max must lie in (0, 0.3] rad"));
        }
        if self.acc.deadband < 0.0 || self.acc.slope < 0.0 {
            return Err(Error::InvalidConfig("acceleration deadband and slope must be non-negative"));
        }
        if self.theta_h_max <= self.acc.deadband {
            return Err(Error::InvalidConfig("theta_h_max must exceed the acceleration deadband"));
        }
        if self.k_spring < 0.0 {
            return Err(Error::InvalidConfig("k_spring must be non-negative"));
        }
        if self.filter_cutoff_hz <= 0.0 {
            return Err(Error::InvalidConfig("filter cutoff must be positive"));
        }
        Ok(())
    }

    /// Default curves with the velocity map raised by 35%, enough to reach
    /// the hardware speed cap at full lean.
    pub fn sprint() -> Self {
        let base = Self::default();
        MappingConfig { vel: base.vel.scaled(1.35), ..base }
    }

    pub fn with_mode(mut self, mode: MappingMode) -> Self {
        self.mode = mode;
        self
    }
}

/// One pilot sample: CoM lean and body twist.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PilotInput {
    /// CoM lean, m. Also read as pilot pitch (rad) in acceleration mode.
    pub p_x: f64,
    /// Body twist, rad.
    pub gamma_h: f64,
    pub t: f64,
    pub seq: u64,
}

impl PilotInput {
    pub fn new(p_x: f64, gamma_h: f64, t: f64, seq: u64) -> Self {
        PilotInput { p_x, gamma_h, t, seq }
    }

    /// Reject non-finite samples and clamp to physical ranges.
    pub fn sanitized(self) -> Result<Self> {
        if !(self.p_x.is_finite() && self.gamma_h.is_finite() && self.t.is_finite()) {
            return Err(Error::NonFinite("pilot input"));
        }
        Ok(PilotInput {
            p_x: self.p_x.clamp(-LEAN_LIMIT, LEAN_LIMIT),
            gamma_h: self.gamma_h.clamp(-TWIST_LIMIT, TWIST_LIMIT),
            ..self
        })
    }
}

/// Velocity mode: `(xdot_des, yaw_rate_des)`. Speed is additionally capped at
/// the hardware limit.
pub fn map_velocity(input: &PilotInput, cfg: &MappingConfig, p: &RobotParams) -> (f64, f64) {
    let xdot = piecewise_eval(input.p_x, &cfg.vel).clamp(-p.v_max_hw, p.v_max_hw);
    (xdot, piecewise_eval(input.gamma_h, &cfg.yaw))
}

/// Acceleration mode: desired forward-positive robot tilt from pilot pitch
/// (taken from the lean channel under the small-angle identification).
pub fn map_acceleration(input: &PilotInput, cfg: &MappingConfig) -> f64 {
    tilt_from_pitch(input.p_x, cfg)
}

pub fn tilt_from_pitch(theta_h: f64, cfg: &MappingConfig) -> f64 {
    let mag = theta_h.abs();
    let cap = cfg.acc.theta_r_max;
    if mag < cfg.acc.deadband {
        0.0
    } else if mag < cfg.theta_h_max {
        sgn(theta_h) * (cfg.acc.slope * (mag - cfg.acc.deadband)).min(cap)
    } else {
        sgn(theta_h) * cap
    }
}

/// Restoring force rendered to the pilot, clamped to the actuator limit.
pub fn virtual_spring(p_x: f64, k_spring: f64) -> f64 {
    (-k_spring * p_x).clamp(-SPRING_FORCE_LIMIT, SPRING_FORCE_LIMIT)
}

/// Control sensitivity `S = max_out / theta_h_max`, m/(s rad).
pub fn sensitivity(cfg: &MappingConfig) -> Result<f64> {
    if !(cfg.theta_h_max.is_finite() && cfg.theta_h_max > 0.0) {
        return Err(Error::InvalidConfig("theta_h_max must be positive"));
    }
    Ok(cfg.vel.max_out() / cfg.theta_h_max)
}

/// Trapezoidal integration of desired speed and yaw rate into desired
/// position and heading (velocity mode).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RateIntegrator {
    pub x: f64,
    pub yaw: f64,
    prev_xdot: f64,
    prev_yaw_rate: f64,
}

impl RateIntegrator {
    pub fn new(x: f64, yaw: f64) -> Self {
        RateIntegrator { x, yaw, prev_xdot: 0.0, prev_yaw_rate: 0.0 }
    }

    /// Start from a given position/heading with given current rates.
    pub fn resume(x: f64, yaw: f64, xdot: f64, yaw_rate: f64) -> Self {
        RateIntegrator { x, yaw, prev_xdot: xdot, prev_yaw_rate: yaw_rate }
    }

    pub fn step(&mut self, xdot: f64, yaw_rate: f64, dt: f64) -> (f64, f64) {
        self.x += 0.5 * dt * (self.prev_xdot + xdot);
        self.yaw += 0.5 * dt * (self.prev_yaw_rate + yaw_rate);
        self.prev_xdot = xdot;
        self.prev_yaw_rate = yaw_rate;
        (self.x, self.yaw)
    }
}

/// Output of [`AccelIntegrator::step`]. Tilt quantities are forward-positive.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AccelDesired {
    pub tilt: f64,
    pub tilt_rate: f64,
    pub tilt_accel: f64,
    pub xddot: f64,
    pub xdot: f64,
    pub x: f64,
    /// Desired speed is pinned at the hardware limit this step.
    pub clamped: bool,
}

/// Converts a uniformly sampled desired-tilt stream into desired wheel
/// acceleration, speed and position.
///
/// Tilt rate and acceleration come from finite differences, each smoothed by
/// a first-order low-pass. Speed and position are integrated with the
/// trapezoid rule. While speed is pinned at the limit, position stops
/// integrating and follows the achieved wheel position instead, so no surplus
/// accumulates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccelIntegrator {
    cutoff_hz: f64,
    prev_tilt: Option<f64>,
    rate: f64,
    prev_rate: f64,
    accel: f64,
    xddot: f64,
    xdot: f64,
    x: f64,
}

impl AccelIntegrator {
    pub fn new(cutoff_hz: f64) -> Self {
        AccelIntegrator {
            cutoff_hz,
            prev_tilt: None,
            rate: 0.0,
            prev_rate: 0.0,
            accel: 0.0,
            xddot: 0.0,
            xdot: 0.0,
            x: 0.0,
        }
    }

    /// Start with given desired position and speed and no tilt history.
    pub fn resume(cutoff_hz: f64, x: f64, xdot: f64) -> Self {
        AccelIntegrator { x, xdot, ..Self::new(cutoff_hz) }
    }

    pub fn xdot(&self) -> f64 {
        self.xdot
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn set_cutoff(&mut self, cutoff_hz: f64) {
        self.cutoff_hz = cutoff_hz;
    }

    /// Override the desired speed (used by the stale-input ramp).
    pub fn set_xdot(&mut self, xdot: f64) {
        self.xdot = xdot;
    }

    fn smoothing(&self, dt: f64) -> f64 {
        let tau = 1.0 / (2.0 * core::f64::consts::PI * self.cutoff_hz);
        dt / (tau + dt)
    }

    pub fn step(&mut self, tilt: f64, dt: f64, p: &RobotParams, achieved_x: f64) -> AccelDesired {
        let a = self.smoothing(dt);
        let raw_rate = match self.prev_tilt {
            Some(prev) => (tilt - prev) / dt,
            None => 0.0,
        };
        let first = self.prev_tilt.is_none();
        self.prev_tilt = Some(tilt);
        self.prev_rate = self.rate;
        self.rate += a * (raw_rate - self.rate);
        let raw_accel = (self.rate - self.prev_rate) / dt;
        self.accel += a * (raw_accel - self.accel);

        let inertia = p.inertia();
        let xddot = -(inertia.rotational / inertia.coupling) * self.accel + p.gravity * tilt;
        let prev_xddot = if first { xddot } else { self.xddot };
        self.xddot = xddot;

        let prev_xdot = self.xdot;
        let mut xdot = prev_xdot + 0.5 * dt * (prev_xddot + xddot);
        let clamped = xdot.abs() > p.v_max_hw;
        if clamped {
            xdot = xdot.clamp(-p.v_max_hw, p.v_max_hw);
            self.x = achieved_x;
        } else {
            self.x += 0.5 * dt * (prev_xdot + xdot);
        }
        self.xdot = xdot;
        AccelDesired {
            tilt,
            tilt_rate: self.rate,
            tilt_accel: self.accel,
            xddot,
            xdot,
            x: self.x,
            clamped,
        }
    }
}
