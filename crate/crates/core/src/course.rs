//! Benchmark courses, run judging, wheel odometry and scripted pilots.

use alloc::string::String;
use alloc::vec::Vec;

use crate::control::yaw_from_encoders;
use crate::error::{Error, Result};
use crate::mapping::{MappingConfig, MappingMode, PiecewiseMapConfig};
use crate::model::{RobotParams, SimState};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Axis-aligned rectangle, m.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct CourseSpec {
    pub name: String,
    pub start: Pose2,
    /// Finish line at this world x, m.
    pub goal_line: f64,
    pub cones: Vec<[f64; 2]>,
    pub cone_radius: f64,
    pub robot_radius: f64,
    pub bounds: Rect,
    /// Seconds before the pilot is released.
    pub countdown: f64,
    /// Seconds after the countdown before the run times out.
    #[cfg_attr(feature = "serde", serde(default = "default_timeout"))]
    pub timeout: f64,
}

#[cfg(feature = "serde")]
fn default_timeout() -> f64 {
    60.0
}

impl CourseSpec {
    /// Straight-line sprint: 4 m to the finish, no obstacles.
    pub fn straight_line() -> Self {
        CourseSpec {
            name: String::from("straight-line"),
            start: Pose2::default(),
            goal_line: 4.0,
            cones: Vec::new(),
            cone_radius: 0.1,
            robot_radius: 0.2,
            bounds: Rect { x_min: -0.25, y_min: -1.0, x_max: 4.75, y_max: 1.0 },
            countdown: 3.0,
            timeout: 60.0,
        }
    }

    /// Three-cone slalom in the same 5 m x 2 m area.
    pub fn three_cone() -> Self {
        CourseSpec {
            name: String::from("3-cone"),
            cones: alloc::vec![[1.0, -0.25], [2.0, 0.25], [3.0, -0.25]],
            ..Self::straight_line()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nums = [
            self.start.x,
            self.start.y,
            self.start.yaw,
            self.goal_line,
            self.cone_radius,
            self.robot_radius,
            self.countdown,
            self.timeout,
        ];
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("course"));
        }
        if self.robot_radius <= 0.0 || self.cone_radius < 0.0 {
            return Err(Error::InvalidConfig("robot radius must be positive and cone radius non-negative"));
        }
        if self.countdown < 0.0 || self.timeout <= 0.0 {
            return Err(Error::InvalidConfig("countdown must be non-negative and timeout positive"));
        }
        let b = self.bounds;
        if !(b.x_min < b.x_max && b.y_min < b.y_max) {
            return Err(Error::InvalidConfig("bounds are empty"));
        }
        if !b.contains(self.start.x, self.start.y) {
            return Err(Error::InvalidConfig("start pose outside bounds"));
        }
        if self.cones.iter().any(|c| !b.contains(c[0], c[1])) {
            return Err(Error::InvalidConfig("cone outside bounds"));
        }
        if self.goal_line <= self.start.x {
            return Err(Error::InvalidConfig("goal line must lie ahead of the start"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Verdict {
    Success,
    Collision { cone: usize },
    OutOfBounds,
    Fell,
    Timeout,
}

impl Verdict {
    pub fn is_success(&self) -> bool {
        matches!(self, Verdict::Success)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Success => "success",
            Verdict::Collision { .. } => "collision",
            Verdict::OutOfBounds => "out_of_bounds",
            Verdict::Fell => "fell",
            Verdict::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "phase"))]
pub enum RunStatus {
    Countdown,
    Running,
    /// Goal crossed; stability window in progress.
    Settling { completion_time: f64 },
    Finished { verdict: Verdict },
}

/// Thresholds that turn a trajectory into a verdict.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JudgeRules {
    /// |pitch| above this is a fall, rad.
    pub fall_pitch: f64,
    /// |pitch| must stay below this after the goal, rad.
    pub settle_pitch: f64,
    /// Length of the post-goal stability window, s.
    pub settle_window: f64,
}

impl Default for JudgeRules {
    fn default() -> Self {
        JudgeRules { fall_pitch: 0.5, settle_pitch: 0.2, settle_window: 2.0 }
    }
}

/// Incremental judge. Feed every simulated state in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Judge {
    course: CourseSpec,
    rules: JudgeRules,
    status: RunStatus,
    prev: Option<(f64, f64)>,
    goal_at: Option<f64>,
}

impl Judge {
    pub fn new(course: CourseSpec) -> Self {
        Self::with_rules(course, JudgeRules::default())
    }

    pub fn with_rules(course: CourseSpec, rules: JudgeRules) -> Self {
        Judge { course, rules, status: RunStatus::Countdown, prev: None, goal_at: None }
    }

    pub fn course(&self) -> &CourseSpec {
        &self.course
    }

    pub fn status(&self) -> RunStatus {
        self.status
    }

    pub fn verdict(&self) -> Option<Verdict> {
        match self.status {
            RunStatus::Finished { verdict } => Some(verdict),
            _ => None,
        }
    }

    /// Sim time at which the goal line was crossed (interpolated).
    pub fn goal_time(&self) -> Option<f64> {
        self.goal_at
    }

    /// Goal time measured from the end of the countdown.
    pub fn completion_time(&self) -> Option<f64> {
        self.goal_at.map(|t| t - self.course.countdown)
    }

    fn failure(&self, s: &SimState) -> Option<Verdict> {
        let reach = self.course.robot_radius + self.course.cone_radius;
        for (i, c) in self.course.cones.iter().enumerate() {
            let (dx, dy) = (s.x - c[0], s.y - c[1]);
            if libm::sqrt(dx * dx + dy * dy) < reach {
                return Some(Verdict::Collision { cone: i });
            }
        }
        if !self.course.bounds.contains(s.x, s.y) {
            return Some(Verdict::OutOfBounds);
        }
        if !(s.pitch.abs() <= self.rules.fall_pitch) {
            return Some(Verdict::Fell);
        }
        None
    }

    pub fn step(&mut self, s: &SimState) -> RunStatus {
        if let RunStatus::Finished { .. } = self.status {
            return self.status;
        }
        let prev = self.prev.replace((s.t, s.x));
        if let Some(v) = self.failure(s) {
            self.status = RunStatus::Finished { verdict: v };
            return self.status;
        }
        let countdown = self.course.countdown;
        match self.status {
            RunStatus::Countdown | RunStatus::Running => {
                if s.t < countdown {
                    self.status = RunStatus::Countdown;
                } else if s.x >= self.course.goal_line {
                    let t_cross = match prev {
                        Some((t0, x0)) if x0 < self.course.goal_line && s.x > x0 => {
                            t0 + (s.t - t0) * (self.course.goal_line - x0) / (s.x - x0)
                        }
                        _ => s.t,
                    };
                    let t_cross = t_cross.max(countdown);
                    self.goal_at = Some(t_cross);
                    self.status = RunStatus::Settling { completion_time: t_cross - countdown };
                } else if s.t - countdown >= self.course.timeout {
                    self.status = RunStatus::Finished { verdict: Verdict::Timeout };
                } else {
                    self.status = RunStatus::Running;
                }
            }
            RunStatus::Settling { .. } => {
                if s.pitch.abs() >= self.rules.settle_pitch {
                    self.status = RunStatus::Finished { verdict: Verdict::Fell };
                } else if s.t - self.goal_at.unwrap_or(s.t) >= self.rules.settle_window {
                    self.status = RunStatus::Finished { verdict: Verdict::Success };
                }
            }
            RunStatus::Finished { .. } => {}
        }
        self.status
    }
}

/// Dead-reckoned pose from wheel encoder increments. Heading comes from the
/// cumulative wheel angle difference; position advances along the half-step
/// heading.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Odometry {
    pub pose: Pose2,
    start_yaw: f64,
    cum_left: f64,
    cum_right: f64,
}

impl Odometry {
    pub fn new(start: Pose2) -> Self {
        Odometry { pose: start, start_yaw: start.yaw, cum_left: 0.0, cum_right: 0.0 }
    }

    pub fn update(&mut self, d_left: f64, d_right: f64, p: &RobotParams) -> Pose2 {
        self.cum_left += d_left;
        self.cum_right += d_right;
        let yaw_old = self.pose.yaw;
        let yaw_new = self.start_yaw + yaw_from_encoders(self.cum_right, self.cum_left, p);
        let mid = 0.5 * (yaw_old + yaw_new);
        let ds = p.wheel_radius * 0.5 * (d_left + d_right);
        self.pose.x += ds * libm::cos(mid);
        self.pose.y += ds * libm::sin(mid);
        self.pose.yaw = yaw_new;
        self.pose
    }
}

/// Sum of segment lengths along a polyline.
pub fn path_length(points: &[[f64; 2]]) -> f64 {
    points
        .windows(2)
        .map(|w| libm::hypot(w[1][0] - w[0][0], w[1][1] - w[0][1]))
        .sum()
}

/// Area of the convex hull of a 2-D point set (pilot motion area).
pub fn motion_area(points: &[[f64; 2]]) -> f64 {
    let mut pts: Vec<[f64; 2]> = points.iter().copied().filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: &mut dyn Iterator<Item = &[f64; 2]> =
            if pass == 0 { &mut pts.iter() } else { &mut pts.iter().rev() };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let n = hull.len();
    let twice: f64 = (0..n).map(|i| {
        let (a, b) = (hull[i], hull[(i + 1) % n]);
        a[0] * b[1] - b[0] * a[1]
    }).sum();
    0.5 * twice.abs()
}

/// One knot of a pilot script; values are linearly interpolated.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScriptPoint {
    pub t: f64,
    pub p_x: f64,
    pub gamma_h: f64,
}

/// Headless stand-ins for a human pilot. Times are measured from the end of
/// the countdown; every profile outputs zero before that.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "profile"))]
pub enum PilotProfile {
    Idle,
    /// Lean in over `ramp_up`, hold, then ease off starting at `release_at`
    /// over `ramp_down`.
    StraightLine { lean: f64, ramp_up: f64, release_at: f64, ramp_down: f64 },
    /// Instantaneous constant lean.
    Step { lean: f64 },
    /// Arbitrary knots (the weave is one of these).
    Script { points: Vec<ScriptPoint> },
}

fn ramp01(t: f64, t0: f64, width: f64) -> f64 {
    if width <= 0.0 {
        return if t >= t0 { 1.0 } else { 0.0 };
    }
    ((t - t0) / width).clamp(0.0, 1.0)
}

impl PilotProfile {
    /// Lean in to full lean, then ease off before the goal so the robot
    /// stops inside the bounds. See [`SpeedPlan::sprint`].
    pub fn straight_line(mapping: &MappingConfig, p: &RobotParams) -> Result<Self> {
        Self::straight_line_with(&SpeedPlan::sprint(p), mapping, p)
    }

    pub fn straight_line_with(plan: &SpeedPlan, mapping: &MappingConfig, p: &RobotParams) -> Result<Self> {
        Ok(PilotProfile::Script { points: path_script(&plan.adapted_to(mapping, p), |_| 0.0, mapping, p)? })
    }

    pub fn step(mapping: &MappingConfig) -> Self {
        PilotProfile::Step { lean: 0.5 * (mapping.vel.deadband + mapping.vel.swp) }
    }

    /// Slalom through the default three-cone layout; see [`WeavePlan`].
    pub fn weave(mapping: &MappingConfig, p: &RobotParams) -> Result<Self> {
        Ok(PilotProfile::Script { points: weave_script(&WeavePlan::for_mapping(mapping), mapping, p)? })
    }

    /// `(p_x, gamma_h)` at time `t` after the countdown.
    pub fn sample(&self, t: f64) -> (f64, f64) {
        if t < 0.0 {
            return (0.0, 0.0);
        }
        match self {
            PilotProfile::Idle => (0.0, 0.0),
            PilotProfile::StraightLine { lean, ramp_up, release_at, ramp_down } => {
                let up = ramp01(t, 0.0, *ramp_up);
                let down = 1.0 - ramp01(t, *release_at, *ramp_down);
                (lean * up.min(down), 0.0)
            }
            PilotProfile::Step { lean } => (*lean, 0.0),
            PilotProfile::Script { points } => interpolate(points, t),
        }
    }

    /// Copy with every knot time stretched by `time_scale` and every lean and
    /// twist scaled by `amp_scale`.
    pub fn perturbed(&self, time_scale: f64, amp_scale: f64) -> Self {
        match self {
            PilotProfile::Idle => PilotProfile::Idle,
            PilotProfile::StraightLine { lean, ramp_up, release_at, ramp_down } => PilotProfile::StraightLine {
                lean: lean * amp_scale,
                ramp_up: ramp_up * time_scale,
                release_at: release_at * time_scale,
                ramp_down: ramp_down * time_scale,
            },
            PilotProfile::Step { lean } => PilotProfile::Step { lean: lean * amp_scale },
            PilotProfile::Script { points } => PilotProfile::Script {
                points: points
                    .iter()
                    .map(|k| ScriptPoint { t: k.t * time_scale, p_x: k.p_x * amp_scale, gamma_h: k.gamma_h * amp_scale })
                    .collect(),
            },
        }
    }
}

fn interpolate(points: &[ScriptPoint], t: f64) -> (f64, f64) {
    match points {
        [] => (0.0, 0.0),
        [first, ..] if t <= first.t => (first.p_x, first.gamma_h),
        _ => {
            let idx = points.partition_point(|k| k.t <= t);
            if idx >= points.len() {
                let last = points[points.len() - 1];
                return (last.p_x, last.gamma_h);
            }
            let (a, b) = (points[idx - 1], points[idx]);
            let w = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 1.0 };
            (a.p_x + w * (b.p_x - a.p_x), a.gamma_h + w * (b.gamma_h - a.gamma_h))
        }
    }
}

/// Input that a curve maps to `target` (odd; zero inside the deadband).
/// Targets beyond the saturated output return `max_in`.
pub fn invert_piecewise(target: f64, cfg: &PiecewiseMapConfig) -> f64 {
    let mag = target.abs();
    let s = if target < 0.0 { -1.0 } else { 1.0 };
    if mag == 0.0 {
        0.0
    } else if mag < cfg.c_swp() && cfg.alpha1 > 0.0 {
        s * (cfg.deadband + mag / cfg.alpha1)
    } else if mag < cfg.max_out() && cfg.alpha2 > 0.0 {
        s * (cfg.swp + (mag - cfg.c_swp()) / cfg.alpha2)
    } else {
        s * cfg.max_in
    }
}

/// Pilot pitch that the acceleration map turns into forward tilt `tilt`.
pub fn invert_tilt(tilt: f64, mapping: &MappingConfig) -> f64 {
    let acc = &mapping.acc;
    let mag = tilt.abs();
    let s = if tilt < 0.0 { -1.0 } else { 1.0 };
    if mag == 0.0 {
        0.0
    } else if mag < acc.theta_r_max && acc.slope > 0.0 {
        s * (acc.deadband + mag / acc.slope).min(mapping.theta_h_max)
    } else {
        s * mapping.theta_h_max
    }
}

/// Geometry of the scripted slalom. The lateral offset rises as a half
/// cosine to `+amplitude` at the first station (`x = spacing`), swings
/// between `+amplitude` and `-amplitude` at each following station, and
/// returns to zero one spacing after the last one. Slope is zero at both
/// ends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WavePlan {
    pub amplitude: f64,
    pub spacing: f64,
    pub stations: u32,
}

/// Trapezoidal speed envelope along a planned path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedPlan {
    /// Cruise wheel speed, m/s. Values at or above what the mapping can
    /// command mean full lean.
    pub cruise: f64,
    /// Speed-up rate, m/s^2.
    pub accel: f64,
    /// Braking rate, m/s^2.
    pub decel: f64,
    /// Planned forward distance at which braking starts, m.
    pub brake_at: f64,
    /// Knot spacing of the generated script, s.
    pub knot_dt: f64,
}

impl SpeedPlan {
    /// Full lean to the hardware cap, braking early enough to stop well
    /// inside the default bounds.
    pub fn sprint(p: &RobotParams) -> Self {
        SpeedPlan { cruise: p.v_max_hw, accel: 1.0, decel: 1.0, brake_at: 3.4, knot_dt: 0.02 }
    }

    /// In acceleration mode the reachable acceleration is bounded by the
    /// tilt cap. Rates are clipped to 90% of that bound, and cruise speed and
    /// braking point are chosen so the robot still comes to rest where the
    /// original plan would. Velocity-mode plans are returned unchanged.
    pub fn adapted_to(&self, mapping: &MappingConfig, p: &RobotParams) -> Self {
        if mapping.mode != MappingMode::Acceleration {
            return *self;
        }
        let a_max = 0.9 * p.gravity * mapping.acc.theta_r_max;
        let (accel, decel) = (self.accel.min(a_max), self.decel.min(a_max));
        let cruise = self.cruise.min(p.v_max_hw);
        let rest_at = self.brake_at + cruise * cruise / (2.0 * self.decel);
        let fit = libm::sqrt(0.9 * rest_at / (0.5 / accel + 0.5 / decel));
        let cruise = cruise.min(fit);
        SpeedPlan { cruise, accel, decel, brake_at: rest_at - cruise * cruise / (2.0 * decel), ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.cruise, self.accel, self.decel, self.brake_at, self.knot_dt];
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidConfig("speed plan entries must be positive"));
        }
        Ok(())
    }
}

/// Parameters of the scripted slalom run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeavePlan {
    pub wave: WavePlan,
    pub speed: SpeedPlan,
    /// Distance the robot is expected to trail its plan by, m. Heading
    /// commands are scheduled for the trailing position.
    pub lag: f64,
}

impl Default for WeavePlan {
    fn default() -> Self {
        WeavePlan {
            wave: WavePlan { amplitude: 0.4, spacing: 1.0, stations: 3 },
            speed: SpeedPlan { cruise: 0.8, accel: 0.8, decel: 1.0, brake_at: 3.8, knot_dt: 0.02 },
            lag: 0.15,
        }
    }
}

impl WeavePlan {
    /// Default plan with the trailing distance tuned per mapping mode.
    pub fn for_mapping(mapping: &MappingConfig) -> Self {
        let base = Self::default();
        match mapping.mode {
            MappingMode::Velocity => base,
            MappingMode::Acceleration => WeavePlan { lag: 0.0, ..base },
        }
    }
}

impl WavePlan {
    pub fn offset(&self, x: f64) -> f64 {
        use core::f64::consts::PI;
        let (a, s, n) = (self.amplitude, self.spacing, self.stations.max(1) as f64);
        let last_sign = if self.stations % 2 == 1 { 1.0 } else { -1.0 };
        if x <= 0.0 || x >= (n + 1.0) * s {
            0.0
        } else if x < s {
            0.5 * a * (1.0 - libm::cos(PI * x / s))
        } else if x <= n * s {
            a * libm::cos(PI * (x - s) / s)
        } else {
            0.5 * last_sign * a * (1.0 + libm::cos(PI * (x - n * s) / s))
        }
    }

    /// Path heading at `x` by central difference.
    pub fn heading(&self, x: f64) -> f64 {
        let h = 1e-6;
        libm::atan2(self.offset(x + h) - self.offset(x - h), 2.0 * h)
    }
}

/// Pilot knots that make the velocity-mapped robot follow `speed` along a
/// path whose heading at planned forward distance `x` is `heading(x)`. The
/// needed speed and yaw rate are converted back to lean and twist through
/// the mapping curves.
pub fn path_script(
    speed: &SpeedPlan,
    heading: impl Fn(f64) -> f64,
    mapping: &MappingConfig,
    p: &RobotParams,
) -> Result<Vec<ScriptPoint>> {
    speed.validate()?;
    let accel_mode = mapping.mode == MappingMode::Acceleration;
    let cap = if accel_mode { p.v_max_hw } else { mapping.vel.max_out().min(p.v_max_hw) };
    let cruise = speed.cruise.min(cap);
    let dt = speed.knot_dt;
    let mut points = Vec::new();
    let (mut t, mut x, mut v) = (0.0, 0.0, 0.0);
    let mut braking = false;
    let mut prev_heading = heading(0.0);
    loop {
        let h = heading(x);
        let yaw_rate = (h - prev_heading) / dt;
        prev_heading = h;
        braking |= x >= speed.brake_at;
        let next = if braking { (v - speed.decel * dt).max(0.0) } else { (v + speed.accel * dt).min(cruise) };
        let p_x = if accel_mode {
            invert_tilt((next - v) / dt / p.gravity, mapping)
        } else if !braking && v >= cap {
            mapping.vel.max_in
        } else {
            invert_piecewise(v, &mapping.vel)
        };
        points.push(ScriptPoint { t, p_x, gamma_h: invert_piecewise(yaw_rate, &mapping.yaw) });
        if braking && v == 0.0 {
            break;
        }
        v = next;
        x += v * libm::cos(h) * dt;
        t += dt;
        if t > 600.0 {
            return Err(Error::InvalidConfig("speed plan never reaches its braking point"));
        }
    }
    Ok(points)
}

/// Knots for the scripted slalom.
pub fn weave_script(plan: &WeavePlan, mapping: &MappingConfig, p: &RobotParams) -> Result<Vec<ScriptPoint>> {
    if !(plan.wave.spacing > 0.0 && plan.wave.amplitude.is_finite() && plan.wave.stations > 0) {
        return Err(Error::InvalidConfig("wave plan needs positive spacing and at least one station"));
    }
    let (wave, lag) = (plan.wave, plan.lag);
    path_script(&plan.speed.adapted_to(mapping, p), |x| wave.heading((x - lag).max(0.0)), mapping, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_at(x: f64, y: f64, t: f64) -> SimState {
        SimState { x, y, t, ..Default::default() }
    }

    #[test]
    fn presets_validate() {
        CourseSpec::straight_line().validate().unwrap();
        CourseSpec::three_cone().validate().unwrap();
    }

    #[test]
    fn idle_robot_times_out() {
        let mut course = CourseSpec::straight_line();
        course.timeout = 1.0;
        let mut j = Judge::new(course);
        let mut t = 0.0;
        let mut last = RunStatus::Countdown;
        while t < 5.0 {
            last = j.step(&state_at(0.0, 0.0, t));
            if t < 3.0 {
                assert_eq!(last, RunStatus::Countdown);
            }
            t += 0.01;
        }
        assert_eq!(last, RunStatus::Finished { verdict: Verdict::Timeout });
    }

    #[test]
    fn collision_boundary() {
        let course = CourseSpec::three_cone();
        let reach = course.robot_radius + course.cone_radius;
        let mut j = Judge::new(course.clone());
        j.step(&state_at(1.0, -0.25 + reach + 0.001, 3.5));
        assert_eq!(j.verdict(), None);
        j.step(&state_at(1.0, -0.25 + reach - 0.001, 3.6));
        assert_eq!(j.verdict(), Some(Verdict::Collision { cone: 0 }));
    }

    #[test]
    fn out_of_bounds_and_fall() {
        let mut j = Judge::new(CourseSpec::straight_line());
        j.step(&state_at(0.0, 1.2, 3.5));
        assert_eq!(j.verdict(), Some(Verdict::OutOfBounds));
        let mut j = Judge::new(CourseSpec::straight_line());
        let mut s = state_at(0.5, 0.0, 3.5);
        s.pitch = -0.51;
        j.step(&s);
        assert_eq!(j.verdict(), Some(Verdict::Fell));
    }

    #[test]
    fn goal_then_window() {
        let mut j = Judge::new(CourseSpec::straight_line());
        j.step(&state_at(3.9, 0.0, 7.0));
        let st = j.step(&state_at(4.1, 0.0, 7.2));
        match st {
            RunStatus::Settling { completion_time } => assert!((completion_time - 4.1).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        j.step(&state_at(4.2, 0.0, 9.0));
        assert_eq!(j.verdict(), None);
        j.step(&state_at(4.2, 0.0, 9.11));
        assert_eq!(j.verdict(), Some(Verdict::Success));
    }

    #[test]
    fn wobble_after_goal_fails() {
        let mut j = Judge::new(CourseSpec::straight_line());
        j.step(&state_at(4.1, 0.0, 7.2));
        let mut s = state_at(4.2, 0.0, 8.0);
        s.pitch = 0.25;
        j.step(&s);
        assert_eq!(j.verdict(), Some(Verdict::Fell));
    }

    #[test]
    fn odometry_straight_and_spin() {
        let p = RobotParams::default();
        let mut o = Odometry::new(Pose2::default());
        let pose = o.update(1.0, 1.0, &p);
        assert!((pose.x - 0.05).abs() < 1e-15);
        assert_eq!(pose.y, 0.0);
        let mut o = Odometry::new(Pose2::default());
        let pose = o.update(-0.3, 0.3, &p);
        assert_eq!((pose.x, pose.y), (0.0, 0.0));
        assert!((pose.yaw - 0.05 / 0.30 * 0.6).abs() < 1e-15);
    }

    #[test]
    fn path_lengths() {
        assert!((path_length(&[[0.0, 0.0], [4.0, 0.0]]) - 4.0).abs() < 1e-15);
        let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]];
        assert!((path_length(&square) - 4.0).abs() < 1e-15);
        assert_eq!(path_length(&[[1.0, 1.0]]), 0.0);
    }

    #[test]
    fn hull_area() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5], [0.2, 0.7]];
        assert!((motion_area(&pts) - 1.0).abs() < 1e-15);
        assert_eq!(motion_area(&[[0.0, 0.0], [1.0, 1.0]]), 0.0);
        assert_eq!(motion_area(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]), 0.0);
    }

    #[test]
    fn profiles_are_zero_before_release() {
        let m = MappingConfig::default();
        for prof in [PilotProfile::straight_line(&m, &RobotParams::default()).unwrap(), PilotProfile::step(&m), PilotProfile::Idle] {
            assert_eq!(prof.sample(-0.1), (0.0, 0.0));
        }
    }

    #[test]
    fn straight_line_shape() {
        let prof = PilotProfile::StraightLine { lean: 0.15, ramp_up: 1.0, release_at: 3.0, ramp_down: 1.0 };
        assert_eq!(prof.sample(0.5).0, 0.075);
        assert_eq!(prof.sample(2.0).0, 0.15);
        assert!((prof.sample(3.5).0 - 0.075).abs() < 1e-15);
        assert_eq!(prof.sample(5.0).0, 0.0);
    }

    #[test]
    fn script_interpolation() {
        let prof = PilotProfile::Script {
            points: alloc::vec![
                ScriptPoint { t: 0.0, p_x: 0.0, gamma_h: 0.0 },
                ScriptPoint { t: 1.0, p_x: 0.1, gamma_h: -0.2 },
            ],
        };
        let (px, gh) = prof.sample(0.25);
        assert!((px - 0.025).abs() < 1e-15 && (gh + 0.05).abs() < 1e-15);
        assert_eq!(prof.sample(9.0), (0.1, -0.2));
    }

    #[test]
    fn inverse_map_roundtrip() {
        let m = MappingConfig::default().vel;
        for y in [0.01, 0.05, 0.079, 0.08, 0.5, 1.0, -0.3] {
            let x = invert_piecewise(y, &m);
            assert!((m.eval(x) - y).abs() < 1e-12, "{y}");
        }
        assert_eq!(invert_piecewise(5.0, &m), m.max_in);
    }

    #[test]
    fn wave_alternates_at_cones() {
        let w = WeavePlan::default().wave;
        assert_eq!(w.offset(0.0), 0.0);
        assert!(w.offset(1.0) > 0.25);
        assert!(w.offset(2.0) < -0.25);
        assert!(w.offset(3.0) > 0.25);
    }
}
