//! Per-tick control laws: balance state feedback, heading PD, hip height PD
//! with gravity feedforward, and the split of axial force and yaw torque onto
//! the two wheel motors.

use crate::model::{ActuatorCommand, PlanarState, RobotParams};
use crate::synthesis::GainSet;

/// Setpoints for every controlled channel. Pitch is in plant convention.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DesiredState {
    pub x: f64,
    pub xdot: f64,
    pub pitch: f64,
    pub pitch_rate: f64,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub hip: f64,
}

pub const DESIRED_STATE_LEN: usize = 7;

impl DesiredState {
    /// Planar reference `[x, pitch, xdot, pitch_rate]`.
    pub fn planar(&self) -> PlanarState {
        PlanarState::new(self.x, self.pitch, self.xdot, self.pitch_rate)
    }

    /// Set the pitch reference from a forward-positive tilt and its rate.
    pub fn set_forward_tilt(&mut self, tilt: f64, tilt_rate: f64) {
        self.pitch = -tilt;
        self.pitch_rate = -tilt_rate;
    }

    /// Field order: x, xdot, pitch, pitch_rate, yaw, yaw_rate, hip.
    pub fn to_array(&self) -> [f64; DESIRED_STATE_LEN] {
        [self.x, self.xdot, self.pitch, self.pitch_rate, self.yaw, self.yaw_rate, self.hip]
    }

    pub fn from_array(a: [f64; DESIRED_STATE_LEN]) -> Self {
        DesiredState { x: a[0], xdot: a[1], pitch: a[2], pitch_rate: a[3], yaw: a[4], yaw_rate: a[5], hip: a[6] }
    }
}

/// Balance law `u = -K (q - q_des)`, returning axial force in N.
pub fn stabilize(desired: &DesiredState, q: &PlanarState, k: &[f64; 4]) -> f64 {
    let err = [
        q.x_w - desired.x,
        q.pitch - desired.pitch,
        q.xdot_w - desired.xdot,
        q.pitch_rate - desired.pitch_rate,
    ];
    -(k[0] * err[0] + k[1] * err[1] + k[2] * err[2] + k[3] * err[3])
}

/// Heading PD: `tau = Kp (yaw_des - yaw) + Kd (rate_des - rate)`.
pub fn yaw_control(yaw_des: f64, yaw_rate_des: f64, yaw: f64, yaw_rate: f64, gains: &GainSet) -> f64 {
    gains.yaw_kp * (yaw_des - yaw) + gains.yaw_kd * (yaw_rate_des - yaw_rate)
}

/// Yaw from cumulative wheel angles under no slip.
pub fn yaw_from_encoders(wheel_right: f64, wheel_left: f64, p: &RobotParams) -> f64 {
    p.wheel_radius / p.track_width * (wheel_right - wheel_left)
}

/// Hip angles accepted by the height controller (exclusive bounds).
pub const HIP_RANGE: (f64, f64) = (0.0, core::f64::consts::FRAC_PI_2);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HipTorque {
    pub tau: f64,
    /// The measured hip angle was outside the valid range and was clamped.
    pub clamped: bool,
}

/// Height PD with gravity feedforward `J_c' m_o g`; the desired hip rate is
/// zero since height is held fixed.
pub fn height_control(hip_des: f64, hip: f64, hip_rate: f64, p: &RobotParams, gains: &GainSet) -> HipTorque {
    let margin = 1e-6;
    let lo = HIP_RANGE.0 + margin;
    let hi = HIP_RANGE.1 - margin;
    let clamped = !(hip > HIP_RANGE.0 && hip < HIP_RANGE.1);
    let angle = if clamped { hip.clamp(lo, hi) } else { hip };
    let feedforward = p.hip_gravity_load(angle);
    let tau = feedforward + gains.hip_kp * (hip_des - angle) + gains.hip_kd * (0.0 - hip_rate);
    HipTorque { tau, clamped }
}

/// Which limits engaged while composing a command.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommandFlags {
    pub wheel_torque_saturated: bool,
    pub hip_torque_saturated: bool,
    pub wheel_speed_limited: bool,
    pub hip_angle_clamped: bool,
}

impl CommandFlags {
    pub const WHEEL_TORQUE: u8 = 1;
    pub const HIP_TORQUE: u8 = 2;
    pub const WHEEL_SPEED: u8 = 4;
    pub const HIP_ANGLE: u8 = 8;

    pub fn bits(&self) -> u8 {
        ((self.wheel_torque_saturated as u8) * Self::WHEEL_TORQUE)
            | ((self.hip_torque_saturated as u8) * Self::HIP_TORQUE)
            | ((self.wheel_speed_limited as u8) * Self::WHEEL_SPEED)
            | ((self.hip_angle_clamped as u8) * Self::HIP_ANGLE)
    }

    pub fn from_bits(b: u8) -> Self {
        CommandFlags {
            wheel_torque_saturated: b & Self::WHEEL_TORQUE != 0,
            hip_torque_saturated: b & Self::HIP_TORQUE != 0,
            wheel_speed_limited: b & Self::WHEEL_SPEED != 0,
            hip_angle_clamped: b & Self::HIP_ANGLE != 0,
        }
    }

    pub fn any(&self) -> bool {
        self.bits() != 0
    }
}

/// Unclamped split of axial force `u` and yaw torque onto the wheels.
pub fn split_wheel_torques(u: f64, tau_yaw: f64, p: &RobotParams) -> (f64, f64) {
    let common = u * p.wheel_radius / 2.0;
    (common - tau_yaw / 2.0, common + tau_yaw / 2.0)
}

/// Inverse of [`split_wheel_torques`]: recover `(u, tau_yaw)`.
pub fn merge_wheel_torques(tau_left: f64, tau_right: f64, p: &RobotParams) -> (f64, f64) {
    ((tau_left + tau_right) / p.wheel_radius, tau_right - tau_left)
}

/// Split, saturate each motor to `tau_max`, and zero any wheel torque that
/// would push a wheel already at `omega_max` further.
pub fn compose_command(
    u: f64,
    tau_yaw: f64,
    tau_hip: f64,
    wheel_rates: (f64, f64),
    p: &RobotParams,
) -> (ActuatorCommand, CommandFlags) {
    let mut flags = CommandFlags::default();
    let (left, right) = split_wheel_torques(u, tau_yaw, p);
    let clamp = |tau: f64, saturated: &mut bool| {
        if tau.abs() > p.tau_max {
            *saturated = true;
        }
        tau.clamp(-p.tau_max, p.tau_max)
    };
    let mut tau_left = clamp(left, &mut flags.wheel_torque_saturated);
    let mut tau_right = clamp(right, &mut flags.wheel_torque_saturated);
    let tau_hip = clamp(tau_hip, &mut flags.hip_torque_saturated);
    for (tau, omega) in [(&mut tau_left, wheel_rates.0), (&mut tau_right, wheel_rates.1)] {
        if omega.abs() >= p.omega_max && *tau * omega > 0.0 {
            *tau = 0.0;
            flags.wheel_speed_limited = true;
        }
    }
    (ActuatorCommand { tau_left, tau_right, tau_hip }, flags)
}
