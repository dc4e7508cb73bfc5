//! The fixed-step tick loop: input latching, mapping, control, plant
//! integration, judging and odometry for one simulated robot.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::control::{
    compose_command, height_control, stabilize, yaw_control, CommandFlags, DesiredState,
};
use crate::course::{CourseSpec, Judge, Odometry, Pose2, RunStatus, Verdict};
use crate::error::{Error, Result};
use crate::mapping::{
    map_acceleration, map_velocity, virtual_spring, AccelIntegrator, MappingConfig, MappingMode,
    PilotInput, RateIntegrator,
};
use crate::model::{check_dt, step_rk4, ActuatorCommand, RobotParams, SimState, NOMINAL_HEIGHT};
use crate::synthesis::GainSet;

const LEASH: f64 = 0.1;

/// Tick-loop timing and safety options.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SimConfig {
    /// Plant step, s.
    pub dt: f64,
    /// Controller runs every `controller_divisor` ticks; the command is held
    /// in between.
    pub controller_divisor: u32,
    /// Input older than this is stale, s.
    pub stale_after: f64,
    /// Time for the safety ramp to take desired rates from full to zero, s.
    pub stale_ramp: f64,
    /// Fixed actuation delay in ticks. Zero disables it.
    pub command_delay: u32,
    /// Held CoM height, m.
    pub height: f64,
    /// Largest allowed gap between desired and achieved wheel travel in
    /// velocity mode, m. The desired position is dragged along beyond it.
    pub position_leash: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            controller_divisor: 1,
            stale_after: 0.2,
            stale_ramp: 0.5,
            command_delay: 0,
            height: NOMINAL_HEIGHT,
            position_leash: LEASH,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        check_dt(self.dt)?;
        if self.controller_divisor == 0 {
            return Err(Error::InvalidConfig("controller_divisor must be at least 1"));
        }
        if !(self.stale_after.is_finite() && self.stale_after > 0.0) {
            return Err(Error::InvalidConfig("stale_after must be positive"));
        }
        if !(self.stale_ramp.is_finite() && self.stale_ramp > 0.0) {
            return Err(Error::InvalidConfig("stale_ramp must be positive"));
        }
        if !(self.position_leash > 0.0) {
            return Err(Error::InvalidConfig("position_leash must be positive"));
        }
        if !(self.height.is_finite() && self.height > 0.0) {
            return Err(Error::InvalidConfig("height must be positive"));
        }
        Ok(())
    }

    /// Controller period, s.
    pub fn controller_period(&self) -> f64 {
        self.dt * self.controller_divisor as f64
    }
}

/// Everything needed to start a world. Together with the input sequence this
/// fully determines the trajectory.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunSetup {
    pub params: RobotParams,
    pub gains: GainSet,
    pub mapping: MappingConfig,
    pub course: CourseSpec,
    pub sim: SimConfig,
}

impl RunSetup {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.gains.validate()?;
        self.mapping.validate()?;
        self.course.validate()?;
        self.sim.validate()
    }
}

/// Live configuration update; absent parts are left unchanged.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfigChange {
    pub mapping: Option<MappingConfig>,
    pub gains: Option<GainSet>,
}

impl ConfigChange {
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = &self.mapping {
            m.validate()?;
        }
        if let Some(g) = &self.gains {
            g.validate()?;
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_none() && self.gains.is_none()
    }
}

/// Frame flag bits. The low nibble mirrors [`CommandFlags`].
pub mod flags {
    pub const WHEEL_TORQUE: u8 = 1;
    pub const HIP_TORQUE: u8 = 2;
    pub const WHEEL_SPEED: u8 = 4;
    pub const HIP_ANGLE: u8 = 8;
    /// Input stale; the safety ramp is active.
    pub const INPUT_STALE: u8 = 16;
    /// Desired speed pinned at the hardware limit (acceleration mode).
    pub const SPEED_CLAMPED: u8 = 32;
    /// A pilot input has been latched.
    pub const INPUT_LATCHED: u8 = 64;
}

/// One tick of history: the state after the step and what produced it.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Frame {
    pub tick: u64,
    pub state: SimState,
    pub input: PilotInput,
    pub desired: DesiredState,
    pub command: ActuatorCommand,
    pub flags: u8,
    pub odometry: Pose2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "kind"))]
pub enum WorldEvent {
    InputStale { t: f64 },
    InputResumed { t: f64 },
    ConfigApplied { t: f64, mode: MappingMode, gains_changed: bool },
    Saturation { t: f64, flags: u8 },
    Goal { t: f64, completion_time: f64 },
    Verdict { t: f64, verdict: Verdict },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TickOutput {
    pub frame: Frame,
    /// Configuration applied at the start of this tick, if any.
    pub applied: Option<ConfigChange>,
    /// A lost input link was registered at the start of this tick.
    pub input_lost: bool,
    pub events: Vec<WorldEvent>,
}

/// Whether [`World::offer_input`] latched a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputAck {
    Accepted { seq: u64 },
    /// Sequence number did not increase; `last` is the last accepted one.
    Dropped { last: Option<u64> },
}

/// Snapshot for observers.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Telemetry {
    pub t: f64,
    pub tick: u64,
    pub pose: Pose2,
    pub pitch: f64,
    pub pitch_rate: f64,
    pub x_w: f64,
    pub xdot_w: f64,
    pub hip: f64,
    pub desired: DesiredState,
    pub command: ActuatorCommand,
    pub spring_force: f64,
    pub input: PilotInput,
    pub mode: MappingMode,
    pub status: RunStatus,
    /// Seconds since the countdown ended (negative during it).
    pub run_clock: f64,
    pub flags: u8,
    pub gains_changed: bool,
}

pub struct World {
    setup: RunSetup,
    gains: GainSet,
    mapping: MappingConfig,
    hip_des: f64,
    state: SimState,
    tick: u64,
    latched: Option<PilotInput>,
    received_at: f64,
    stale: bool,
    /// Safety-ramp gain in [0, 1].
    rate_scale: f64,
    rate: RateIntegrator,
    accel: AccelIntegrator,
    desired: DesiredState,
    command: ActuatorCommand,
    command_flags: CommandFlags,
    accel_clamped: bool,
    delay_line: VecDeque<ActuatorCommand>,
    pending: Option<ConfigChange>,
    pending_lost: bool,
    link_lost: bool,
    gains_changed: bool,
    judge: Judge,
    odometry: Odometry,
    last_flags: u8,
}

impl World {
    pub fn new(setup: RunSetup) -> Result<Self> {
        setup.validate()?;
        let p = &setup.params;
        let start = setup.course.start;
        let hip_des = p.hip_angle_for_height(setup.sim.height);
        if !(hip_des > 0.0 && hip_des < core::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidConfig("height unreachable with this leg length"));
        }
        let mut state = SimState::upright(p);
        state.hip = hip_des;
        state.x = start.x;
        state.y = start.y;
        state.yaw = start.yaw;
        let desired = DesiredState { yaw: start.yaw, hip: hip_des, ..Default::default() };
        let delay_line = (0..setup.sim.command_delay).map(|_| ActuatorCommand::default()).collect();
        Ok(World {
            gains: setup.gains,
            mapping: setup.mapping,
            hip_des,
            state,
            tick: 0,
            latched: None,
            received_at: 0.0,
            stale: false,
            rate_scale: 1.0,
            rate: RateIntegrator::new(0.0, start.yaw),
            accel: AccelIntegrator::new(setup.mapping.filter_cutoff_hz),
            desired,
            command: ActuatorCommand::default(),
            command_flags: CommandFlags::default(),
            accel_clamped: false,
            delay_line,
            pending: None,
            pending_lost: false,
            link_lost: false,
            gains_changed: false,
            judge: Judge::new(setup.course.clone()),
            odometry: Odometry::new(start),
            last_flags: 0,
            setup,
        })
    }

    pub fn setup(&self) -> &RunSetup {
        &self.setup
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn desired(&self) -> &DesiredState {
        &self.desired
    }

    pub fn judge(&self) -> &Judge {
        &self.judge
    }

    pub fn odometry(&self) -> Pose2 {
        self.odometry.pose
    }

    pub fn mapping(&self) -> &MappingConfig {
        &self.mapping
    }

    pub fn gains(&self) -> &GainSet {
        &self.gains
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    /// A configuration change was applied after the first tick; such a run
    /// is not a valid benchmark record.
    pub fn gains_changed(&self) -> bool {
        self.gains_changed
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.latched.map(|i| i.seq)
    }

    /// Latch a pilot sample if its sequence number is newer than the last
    /// one accepted. Non-finite samples are rejected.
    pub fn offer_input(&mut self, input: PilotInput) -> Result<InputAck> {
        let input = input.sanitized()?;
        if let Some(last) = self.latched {
            if input.seq <= last.seq {
                return Ok(InputAck::Dropped { last: Some(last.seq) });
            }
        }
        self.latched = Some(input);
        self.received_at = self.state.t;
        self.link_lost = false;
        Ok(InputAck::Accepted { seq: input.seq })
    }

    /// Validate now, apply at the start of the next tick. A later call
    /// before that tick merges over an earlier one.
    pub fn queue_config(&mut self, change: ConfigChange) -> Result<()> {
        change.validate()?;
        let merged = match self.pending.take() {
            Some(prev) => ConfigChange {
                mapping: change.mapping.or(prev.mapping),
                gains: change.gains.or(prev.gains),
            },
            None => change,
        };
        self.pending = Some(merged);
        Ok(())
    }

    /// The input link is gone: treat the latched input as stale from the
    /// next tick on, without waiting for the staleness timeout. A newer
    /// input clears this.
    pub fn notify_input_lost(&mut self) {
        self.pending_lost = true;
    }

    fn apply_pending(&mut self) -> Option<ConfigChange> {
        let change = self.pending.take()?;
        if let Some(g) = change.gains {
            self.gains = g;
        }
        if let Some(m) = change.mapping {
            let old_mode = self.mapping.mode;
            self.mapping = m;
            self.accel.set_cutoff(m.filter_cutoff_hz);
            if old_mode != m.mode {
                let d = self.desired;
                match m.mode {
                    MappingMode::Velocity => {
                        self.rate = RateIntegrator::resume(d.x, d.yaw, d.xdot, d.yaw_rate);
                    }
                    MappingMode::Acceleration => {
                        self.accel = AccelIntegrator::resume(m.filter_cutoff_hz, d.x, d.xdot);
                        self.rate = RateIntegrator::resume(d.x, d.yaw, d.xdot, d.yaw_rate);
                    }
                }
            }
        }
        if self.tick > 0 {
            self.gains_changed = true;
        }
        Some(change)
    }

    fn run_clock(&self) -> f64 {
        self.state.t - self.setup.course.countdown
    }

    /// Pilot input as seen by the mapping: zero during the countdown.
    fn effective_input(&self) -> PilotInput {
        match self.latched {
            Some(i) if self.run_clock() >= 0.0 => i,
            Some(i) => PilotInput { p_x: 0.0, gamma_h: 0.0, ..i },
            None => PilotInput::default(),
        }
    }

    fn update_mapping(&mut self, dt: f64) {
        let p = self.setup.params;
        let input = self.effective_input();
        let target = if self.stale { 0.0 } else { 1.0 };
        let step = dt / self.setup.sim.stale_ramp;
        self.rate_scale = if self.rate_scale < target {
            (self.rate_scale + step).min(target)
        } else {
            (self.rate_scale - step).max(target)
        };
        let scale = self.rate_scale;
        let (_, yaw_rate_map) = map_velocity(&input, &self.mapping, &p);
        let yaw_rate = scale * yaw_rate_map;
        let d = &mut self.desired;
        match self.mapping.mode {
            MappingMode::Velocity => {
                let (xdot_map, _) = map_velocity(&input, &self.mapping, &p);
                let xdot = scale * xdot_map;
                let (mut x, yaw) = self.rate.step(xdot, yaw_rate, dt);
                let leash = self.setup.sim.position_leash;
                let gap = x - self.state.x_w;
                if gap.abs() > leash {
                    x = self.state.x_w + leash.copysign(gap);
                    self.rate = RateIntegrator::resume(x, yaw, xdot, yaw_rate);
                }
                d.x = x;
                d.xdot = xdot;
                d.yaw = yaw;
                d.yaw_rate = yaw_rate;
                d.set_forward_tilt(0.0, 0.0);
            }
            MappingMode::Acceleration if self.stale => {
                // Ramp the held speed down directly; tilt reference returns
                // to upright. The integrator restarts from here on recovery.
                let xdot = d.xdot.signum() * (d.xdot.abs() - p.v_max_hw * step).max(0.0);
                let (x, yaw) = self.rate.step(xdot, yaw_rate, dt);
                d.x = x;
                d.xdot = xdot;
                d.yaw = yaw;
                d.yaw_rate = yaw_rate;
                d.set_forward_tilt(0.0, 0.0);
                self.accel = AccelIntegrator::resume(self.mapping.filter_cutoff_hz, x, xdot);
            }
            MappingMode::Acceleration => {
                let tilt = map_acceleration(&input, &self.mapping);
                let out = self.accel.step(tilt, dt, &p, self.state.x_w);
                let (_, yaw) = self.rate.step(out.xdot, yaw_rate, dt);
                d.x = out.x;
                d.xdot = out.xdot;
                d.yaw = yaw;
                d.yaw_rate = yaw_rate;
                d.set_forward_tilt(out.tilt, out.tilt_rate);
                // keep the rate integrator's x in step for mode switches
                self.rate = RateIntegrator::resume(out.x, yaw, out.xdot, yaw_rate);
                self.accel_clamped = out.clamped;
            }
        }
        self.desired.hip = self.hip_des;
    }

    fn run_controller(&mut self) {
        let p = &self.setup.params;
        let s = &self.state;
        let u = stabilize(&self.desired, &s.planar(), &self.gains.k);
        let tau_yaw = yaw_control(self.desired.yaw, self.desired.yaw_rate, s.yaw, s.yaw_rate, &self.gains);
        let hip = height_control(self.desired.hip, s.hip, s.hip_rate, p, &self.gains);
        let (cmd, mut f) = compose_command(u, tau_yaw, hip.tau, s.wheel_rates(p), p);
        f.hip_angle_clamped = hip.clamped;
        self.command = cmd;
        self.command_flags = f;
    }

    /// Advance one fixed step.
    pub fn tick(&mut self) -> Result<TickOutput> {
        let mut events = Vec::new();
        let dt = self.setup.sim.dt;
        let applied = self.apply_pending();
        if applied.is_some() {
            events.push(WorldEvent::ConfigApplied {
                t: self.state.t,
                mode: self.mapping.mode,
                gains_changed: self.gains_changed,
            });
        }

        let input_lost = core::mem::take(&mut self.pending_lost);
        if input_lost {
            self.link_lost = true;
        }
        let timed_out = self.state.t - self.received_at > self.setup.sim.stale_after;
        let stale_now = self.latched.is_some() && (self.link_lost || timed_out);
        if stale_now != self.stale {
            self.stale = stale_now;
            events.push(if stale_now {
                WorldEvent::InputStale { t: self.state.t }
            } else {
                WorldEvent::InputResumed { t: self.state.t }
            });
        }

        self.accel_clamped = false;
        self.update_mapping(dt);
        if self.tick.is_multiple_of(self.setup.sim.controller_divisor as u64) {
            self.run_controller();
        }
        let applied_cmd = match self.delay_line.pop_front() {
            Some(old) => {
                self.delay_line.push_back(self.command);
                old
            }
            None => self.command,
        };

        let before = self.state;
        self.state = step_rk4(&before, &applied_cmd, &self.setup.params, dt)?;
        if !self.state.is_finite() {
            return Err(Error::NonFinite("simulated state"));
        }
        self.tick += 1;
        let odom = self.odometry.update(
            self.state.wheel_left - before.wheel_left,
            self.state.wheel_right - before.wheel_right,
            &self.setup.params,
        );

        let prev_status = self.judge.status();
        let status = self.judge.step(&self.state);
        if status != prev_status {
            match status {
                RunStatus::Settling { completion_time } => {
                    events.push(WorldEvent::Goal { t: self.state.t, completion_time })
                }
                RunStatus::Finished { verdict } => events.push(WorldEvent::Verdict { t: self.state.t, verdict }),
                _ => {}
            }
        }

        let mut bits = self.command_flags.bits();
        if self.stale {
            bits |= flags::INPUT_STALE;
        }
        if self.accel_clamped {
            bits |= flags::SPEED_CLAMPED;
        }
        if self.latched.is_some() {
            bits |= flags::INPUT_LATCHED;
        }
        let sat_mask = flags::WHEEL_TORQUE | flags::HIP_TORQUE | flags::WHEEL_SPEED | flags::HIP_ANGLE;
        if bits & sat_mask & !self.last_flags != 0 {
            events.push(WorldEvent::Saturation { t: self.state.t, flags: bits & sat_mask });
        }
        self.last_flags = bits;

        Ok(TickOutput {
            frame: Frame {
                tick: self.tick,
                state: self.state,
                input: self.latched.unwrap_or_default(),
                desired: self.desired,
                command: applied_cmd,
                flags: bits,
                odometry: odom,
            },
            applied,
            input_lost,
            events,
        })
    }

    pub fn telemetry(&self) -> Telemetry {
        let input = self.latched.unwrap_or_default();
        Telemetry {
            t: self.state.t,
            tick: self.tick,
            pose: Pose2 { x: self.state.x, y: self.state.y, yaw: self.state.yaw },
            pitch: self.state.pitch,
            pitch_rate: self.state.pitch_rate,
            x_w: self.state.x_w,
            xdot_w: self.state.xdot_w,
            hip: self.state.hip,
            desired: self.desired,
            command: self.command,
            spring_force: virtual_spring(input.p_x, self.mapping.k_spring),
            input,
            mode: self.mapping.mode,
            status: self.judge.status(),
            run_clock: self.run_clock(),
            flags: self.last_flags,
            gains_changed: self.gains_changed,
        }
    }
}
