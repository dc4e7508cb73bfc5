//! Plant model: physical parameters, the planar wheeled-inverted-pendulum
//! dynamics, the decoupled yaw and leg subsystems, and a fixed-step RK4
//! integrator.
//!
//! Pitch convention: `pitch` is the body angle from vertical with the sign
//! used by the planar equations of motion, where a positive axial force `u`
//! accelerates the wheel toward +x *and* raises `pitch`. Holding a constant
//! forward acceleration therefore requires a negative pitch. The teleoperation
//! mappings work with forward-positive tilt and negate at the boundary (see
//! [`crate::control::DesiredState::set_forward_tilt`]).

use crate::error::{Error, Result};

/// CoM height the legs hold during all benchmark runs, m.
pub const NOMINAL_HEIGHT: f64 = 0.28;

/// Upper bound on the integration step, s.
pub const MAX_DT: f64 = 0.005;

/// Physical constants of the plant. Wheel mass and spin inertia are for both
/// wheels combined.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RobotParams {
    /// Body mass, kg.
    #[cfg_attr(feature = "serde", serde(rename = "m_o"))]
    pub body_mass: f64,
    /// Combined wheel mass, kg.
    #[cfg_attr(feature = "serde", serde(rename = "m_w"))]
    pub wheel_mass: f64,
    /// Combined wheel spin inertia, kg m^2.
    #[cfg_attr(feature = "serde", serde(rename = "I_w"))]
    pub wheel_inertia: f64,
    /// Body pitch inertia about its CoM, kg m^2.
    #[cfg_attr(feature = "serde", serde(rename = "I_o"))]
    pub body_inertia: f64,
    /// Wheel axle to body CoM, m.
    #[cfg_attr(feature = "serde", serde(rename = "L"))]
    pub com_offset: f64,
    /// Wheel radius, m.
    #[cfg_attr(feature = "serde", serde(rename = "r_w"))]
    pub wheel_radius: f64,
    /// Distance between the two wheels, m.
    #[cfg_attr(feature = "serde", serde(rename = "r_c"))]
    pub track_width: f64,
    /// Yaw inertia, kg m^2.
    #[cfg_attr(feature = "serde", serde(rename = "I_z"))]
    pub yaw_inertia: f64,
    /// Leg link inertia about the hip, kg m^2.
    #[cfg_attr(feature = "serde", serde(rename = "I_leg"))]
    pub leg_inertia: f64,
    /// Leg link length, m.
    #[cfg_attr(feature = "serde", serde(rename = "l_leg"))]
    pub leg_length: f64,
    /// Gravitational acceleration, m/s^2.
    #[cfg_attr(feature = "serde", serde(rename = "g"))]
    pub gravity: f64,
    /// Per-motor torque limit, N m.
    pub tau_max: f64,
    /// Per-motor speed limit, rad/s.
    pub omega_max: f64,
    /// Hardware top speed, m/s.
    pub v_max_hw: f64,
    /// Optional viscous wheel friction, N s/m. Zero disables it.
    #[cfg_attr(feature = "serde", serde(rename = "b_w"))]
    pub wheel_friction: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        RobotParams {
            body_mass: 6.0,
            wheel_mass: 0.8,
            wheel_inertia: 0.001,
            body_inertia: 0.12,
            com_offset: 0.25,
            wheel_radius: 0.05,
            track_width: 0.30,
            yaw_inertia: 0.05,
            leg_inertia: 0.02,
            leg_length: 0.175,
            gravity: 9.81,
            tau_max: 24.0,
            omega_max: 30.0,
            v_max_hw: 1.4,
            wheel_friction: 0.0,
        }
    }
}

/// Lumped inertia terms of the planar model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarInertia {
    /// m_o + m_w + I_w / r_w^2
    pub translational: f64,
    /// m_o L^2 + I_o
    pub rotational: f64,
    /// m_o L
    pub coupling: f64,
}

impl PlanarInertia {
    /// Determinant of the upright mass matrix.
    pub fn determinant(&self) -> f64 {
        self.translational * self.rotational - self.coupling * self.coupling
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.body_mass,
            self.wheel_mass,
            self.wheel_inertia,
            self.body_inertia,
            self.com_offset,
            self.wheel_radius,
            self.track_width,
            self.yaw_inertia,
            self.leg_inertia,
            self.leg_length,
            self.gravity,
            self.tau_max,
            self.omega_max,
            self.v_max_hw,
        ];
        if positive.iter().any(|v| !v.is_finite()) || !self.wheel_friction.is_finite() {
            return Err(Error::NonFinite("robot parameters"));
        }
        if positive.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidParams("all physical constants must be strictly positive"));
        }
        if self.wheel_friction < 0.0 {
            return Err(Error::InvalidParams("wheel friction must be non-negative"));
        }
        if self.inertia().determinant() <= 0.0 {
            return Err(Error::InvalidParams("planar mass matrix is singular"));
        }
        if self.v_max_hw > self.omega_max * self.wheel_radius {
            return Err(Error::InvalidParams("v_max_hw exceeds omega_max * r_w"));
        }
        Ok(())
    }

    pub fn inertia(&self) -> PlanarInertia {
        PlanarInertia {
            translational: self.body_mass
                + self.wheel_mass
                + self.wheel_inertia / (self.wheel_radius * self.wheel_radius),
            rotational: self.body_mass * self.com_offset * self.com_offset + self.body_inertia,
            coupling: self.body_mass * self.com_offset,
        }
    }

    /// Yaw moment arm: I_z * yaw_accel = yaw_gain * (tau_R - tau_L).
    pub fn yaw_gain(&self) -> f64 {
        self.track_width / (2.0 * self.wheel_radius)
    }

    /// Vertical drop from hip to wheel axle for hip angle `hip`.
    pub fn hip_height(&self, hip: f64) -> f64 {
        2.0 * self.leg_length * libm::cos(hip)
    }

    /// d(hip_height)/d(hip).
    pub fn leg_jacobian(&self, hip: f64) -> f64 {
        -2.0 * self.leg_length * libm::sin(hip)
    }

    /// Hip angle that places the CoM at `height`.
    pub fn hip_angle_for_height(&self, height: f64) -> f64 {
        libm::acos((height / (2.0 * self.leg_length)).clamp(-1.0, 1.0))
    }

    /// Gravity load torque on the hip joint at angle `hip`.
    pub fn hip_gravity_load(&self, hip: f64) -> f64 {
        self.leg_jacobian(hip) * self.body_mass * self.gravity
    }
}

/// Planar pendulum state `[x_w, pitch, xdot_w, pitch_rate]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlanarState {
    pub x_w: f64,
    pub pitch: f64,
    pub xdot_w: f64,
    pub pitch_rate: f64,
}

impl PlanarState {
    pub const fn new(x_w: f64, pitch: f64, xdot_w: f64, pitch_rate: f64) -> Self {
        PlanarState { x_w, pitch, xdot_w, pitch_rate }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_w, self.pitch, self.xdot_w, self.pitch_rate]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        PlanarState::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Full simulated state. `x_w` is wheel travel along the body heading;
/// `x`/`y` are the world position of the axle midpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimState {
    pub x_w: f64,
    pub pitch: f64,
    pub xdot_w: f64,
    pub pitch_rate: f64,
    pub y: f64,
    pub x: f64,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub hip: f64,
    pub hip_rate: f64,
    pub wheel_left: f64,
    pub wheel_right: f64,
    pub t: f64,
}

pub const SIM_STATE_LEN: usize = 13;

impl SimState {
    /// Upright at rest at the world origin with the legs at nominal height.
    pub fn upright(p: &RobotParams) -> Self {
        SimState { hip: p.hip_angle_for_height(NOMINAL_HEIGHT), ..Default::default() }
    }

    pub fn planar(&self) -> PlanarState {
        PlanarState::new(self.x_w, self.pitch, self.xdot_w, self.pitch_rate)
    }

    pub fn set_planar(&mut self, q: PlanarState) {
        self.x_w = q.x_w;
        self.pitch = q.pitch;
        self.xdot_w = q.xdot_w;
        self.pitch_rate = q.pitch_rate;
    }

    /// Field order: x_w, pitch, xdot_w, pitch_rate, y, x, yaw, yaw_rate,
    /// hip, hip_rate, wheel_left, wheel_right, t.
    pub fn to_array(&self) -> [f64; SIM_STATE_LEN] {
        [
            self.x_w,
            self.pitch,
            self.xdot_w,
            self.pitch_rate,
            self.y,
            self.x,
            self.yaw,
            self.yaw_rate,
            self.hip,
            self.hip_rate,
            self.wheel_left,
            self.wheel_right,
            self.t,
        ]
    }

    pub fn from_array(a: [f64; SIM_STATE_LEN]) -> Self {
        SimState {
            x_w: a[0],
            pitch: a[1],
            xdot_w: a[2],
            pitch_rate: a[3],
            y: a[4],
            x: a[5],
            yaw: a[6],
            yaw_rate: a[7],
            hip: a[8],
            hip_rate: a[9],
            wheel_left: a[10],
            wheel_right: a[11],
            t: a[12],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Wheel angular velocities (left, right), rad/s.
    pub fn wheel_rates(&self, p: &RobotParams) -> (f64, f64) {
        let spin = self.xdot_w / p.wheel_radius;
        let turn = p.yaw_gain() * self.yaw_rate;
        (spin - turn, spin + turn)
    }

    fn axpy(&self, h: f64, d: &SimState) -> SimState {
        let a = self.to_array();
        let b = d.to_array();
        let mut out = [0.0; SIM_STATE_LEN];
        for i in 0..SIM_STATE_LEN {
            out[i] = a[i] + h * b[i];
        }
        SimState::from_array(out)
    }
}

/// Motor torques, N m.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ActuatorCommand {
    pub tau_left: f64,
    pub tau_right: f64,
    pub tau_hip: f64,
}

impl ActuatorCommand {
    /// Net axial ground force from both wheel torques.
    pub fn axial_force(&self, p: &RobotParams) -> f64 {
        (self.tau_left + self.tau_right) / p.wheel_radius
    }

    pub fn is_finite(&self) -> bool {
        self.tau_left.is_finite() && self.tau_right.is_finite() && self.tau_hip.is_finite()
    }
}

/// Time derivative of the planar state under axial force `u`, from the
/// full nonlinear equations of motion:
///
/// ```text
/// M xdd + c sin(th) thd^2 - c cos(th) thdd = u
/// D thdd - c cos(th) xdd - c g sin(th)     = 0
/// ```
/// with `M = m_o + m_w + I_w/r^2`, `D = m_o L^2 + I_o`, `c = m_o L`.
pub fn planar_derivative(q: &PlanarState, u: f64, p: &RobotParams) -> Result<PlanarState> {
    if !q.is_finite() || !u.is_finite() {
        return Err(Error::NonFinite("planar state or input"));
    }
    Ok(planar_accel(q, u, p))
}

#[inline]
fn planar_accel(q: &PlanarState, u: f64, p: &RobotParams) -> PlanarState {
    let PlanarInertia { translational: m, rotational: d, coupling: c } = p.inertia();
    let (s, co) = (libm::sin(q.pitch), libm::cos(q.pitch));
    let force = u - p.wheel_friction * q.xdot_w - c * s * q.pitch_rate * q.pitch_rate;
    let moment = c * p.gravity * s;
    // [m, -c co; -c co, d] [xdd; thdd] = [force; moment]
    let det = m * d - c * c * co * co;
    let xdd = (d * force + c * co * moment) / det;
    let thdd = (c * co * force + m * moment) / det;
    PlanarState::new(q.xdot_w, q.pitch_rate, xdd, thdd)
}

/// Time derivative of the full state. The returned `t` component is 1.
pub fn full_derivative(s: &SimState, c: &ActuatorCommand, p: &RobotParams) -> Result<SimState> {
    if !s.is_finite() || !c.is_finite() {
        return Err(Error::NonFinite("simulation state or command"));
    }
    Ok(full_derivative_unchecked(s, c, p))
}

fn full_derivative_unchecked(s: &SimState, c: &ActuatorCommand, p: &RobotParams) -> SimState {
    let planar = planar_accel(&s.planar(), c.axial_force(p), p);
    let yaw_accel = p.yaw_gain() * (c.tau_right - c.tau_left) / p.yaw_inertia;
    let hip_accel = (c.tau_hip - p.hip_gravity_load(s.hip)) / p.leg_inertia;
    let (wl, wr) = s.wheel_rates(p);
    SimState {
        x_w: planar.x_w,
        pitch: planar.pitch,
        xdot_w: planar.xdot_w,
        pitch_rate: planar.pitch_rate,
        y: s.xdot_w * libm::sin(s.yaw),
        x: s.xdot_w * libm::cos(s.yaw),
        yaw: s.yaw_rate,
        yaw_rate: yaw_accel,
        hip: s.hip_rate,
        hip_rate: hip_accel,
        wheel_left: wl,
        wheel_right: wr,
        t: 1.0,
    }
}

pub fn check_dt(dt: f64) -> Result<()> {
    if dt.is_finite() && dt > 0.0 && dt <= MAX_DT {
        Ok(())
    } else {
        Err(Error::InvalidTimestep(dt))
    }
}

/// One classic fourth-order Runge-Kutta step with the command held constant.
pub fn step_rk4(s: &SimState, c: &ActuatorCommand, p: &RobotParams, dt: f64) -> Result<SimState> {
    check_dt(dt)?;
    if !s.is_finite() || !c.is_finite() {
        return Err(Error::NonFinite("simulation state or command"));
    }
    let k1 = full_derivative_unchecked(s, c, p);
    let k2 = full_derivative_unchecked(&s.axpy(0.5 * dt, &k1), c, p);
    let k3 = full_derivative_unchecked(&s.axpy(0.5 * dt, &k2), c, p);
    let k4 = full_derivative_unchecked(&s.axpy(dt, &k3), c, p);
    let a = s.to_array();
    let (d1, d2, d3, d4) = (k1.to_array(), k2.to_array(), k3.to_array(), k4.to_array());
    let mut out = [0.0; SIM_STATE_LEN];
    for i in 0..SIM_STATE_LEN {
        out[i] = a[i] + dt / 6.0 * (d1[i] + 2.0 * d2[i] + 2.0 * d3[i] + d4[i]);
    }
    let next = SimState::from_array(out);
    if !next.is_finite() {
        return Err(Error::NonFinite("integrated state"));
    }
    Ok(next)
}

/// RK4 on the planar subsystem alone, force held constant over the step.
pub fn step_planar_rk4(q: &PlanarState, u: f64, p: &RobotParams, dt: f64) -> Result<PlanarState> {
    check_dt(dt)?;
    let k1 = planar_derivative(q, u, p)?;
    let add = |a: &PlanarState, h: f64, b: &PlanarState| {
        let (x, y) = (a.to_array(), b.to_array());
        PlanarState::from_array([x[0] + h * y[0], x[1] + h * y[1], x[2] + h * y[2], x[3] + h * y[3]])
    };
    let k2 = planar_accel(&add(q, 0.5 * dt, &k1), u, p);
    let k3 = planar_accel(&add(q, 0.5 * dt, &k2), u, p);
    let k4 = planar_accel(&add(q, dt, &k3), u, p);
    let a = q.to_array();
    let (d1, d2, d3, d4) = (k1.to_array(), k2.to_array(), k3.to_array(), k4.to_array());
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = a[i] + dt / 6.0 * (d1[i] + 2.0 * d2[i] + 2.0 * d3[i] + d4[i]);
    }
    Ok(PlanarState::from_array(out))
}

/// Kinetic plus potential energy of the planar pendulum, with the wheel
/// axle height as the potential datum.
pub fn mechanical_energy(q: &PlanarState, p: &RobotParams) -> f64 {
    let PlanarInertia { translational: m, rotational: d, coupling: c } = p.inertia();
    let co = libm::cos(q.pitch);
    let kinetic = 0.5 * m * q.xdot_w * q.xdot_w - c * co * q.xdot_w * q.pitch_rate
        + 0.5 * d * q.pitch_rate * q.pitch_rate;
    kinetic + c * p.gravity * co
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> RobotParams {
        RobotParams::default()
    }

    #[test]
    fn defaults_are_valid_and_hit_nominal_height() {
        let p = params();
        p.validate().unwrap();
        let hip = p.hip_angle_for_height(NOMINAL_HEIGHT);
        assert!((hip - libm::acos(0.8)).abs() < 1e-15);
        assert!((p.hip_height(hip) - 0.28).abs() < 1e-15);
        assert!((p.body_mass + p.wheel_mass - 6.8).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = params();
        p.body_inertia = 0.0;
        assert!(matches!(p.validate(), Err(Error::InvalidParams(_))));
        let mut p = params();
        p.v_max_hw = 2.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.gravity = f64::NAN;
        assert_eq!(p.validate(), Err(Error::NonFinite("robot parameters")));
    }

    #[test]
    fn upright_is_fixed_point() {
        let d = planar_derivative(&PlanarState::default(), 0.0, &params()).unwrap();
        assert_eq!(d, PlanarState::default());
    }

    #[test]
    fn tilt_diverges() {
        let d = planar_derivative(&PlanarState::new(0.0, 0.1, 0.0, 0.0), 0.0, &params()).unwrap();
        assert!(d.pitch_rate > 0.0);
    }

    #[test]
    fn nonfinite_rejected() {
        let q = PlanarState::new(0.0, f64::NAN, 0.0, 0.0);
        assert!(planar_derivative(&q, 0.0, &params()).is_err());
        assert!(planar_derivative(&PlanarState::default(), f64::INFINITY, &params()).is_err());
    }

    #[test]
    fn dt_range_enforced() {
        let p = params();
        let s = SimState::upright(&p);
        let c = ActuatorCommand::default();
        assert_eq!(step_rk4(&s, &c, &p, 0.0), Err(Error::InvalidTimestep(0.0)));
        assert!(step_rk4(&s, &c, &p, 0.006).is_err());
        assert!(step_rk4(&s, &c, &p, 0.005).is_ok());
    }

    #[test]
    fn energy_reference_points() {
        let p = params();
        let mgl = p.body_mass * p.gravity * p.com_offset;
        assert!((mechanical_energy(&PlanarState::default(), &p) - mgl).abs() < 1e-12);
        let hanging = PlanarState::new(0.0, core::f64::consts::PI, 0.0, 0.0);
        assert!((mechanical_energy(&hanging, &p) + mgl).abs() < 1e-12);
    }

    #[test]
    fn hip_holds_with_gravity_torque() {
        let p = params();
        let s = SimState::upright(&p);
        let c = ActuatorCommand { tau_hip: p.hip_gravity_load(s.hip), ..Default::default() };
        let d = full_derivative(&s, &c, &p).unwrap();
        assert_eq!(d.hip_rate, 0.0);
    }
}
