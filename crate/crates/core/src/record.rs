//! Run records: scripted runs, replay and the metrics derived from them.

use alloc::vec::Vec;

use crate::course::{motion_area, path_length, PilotProfile, RunStatus, Verdict};
use crate::error::Result;
use crate::mapping::PilotInput;
use crate::world::{ConfigChange, Frame, RunSetup, TickOutput, World, WorldEvent};

/// A configuration change applied at the start of tick `tick + 1`, i.e.
/// before the step that produced frame number `tick + 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfigEvent {
    pub tick: u64,
    pub change: ConfigChange,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub verdict: Option<Verdict>,
    /// Countdown end to goal crossing, s.
    pub completion_time: Option<f64>,
    /// Odometry path from countdown end to goal crossing, m.
    pub path_length: Option<f64>,
    /// Convex-hull area of the pilot input trace, m rad.
    pub motion_area: f64,
    pub gains_changed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub setup: RunSetup,
    pub frames: Vec<Frame>,
    pub config_events: Vec<ConfigEvent>,
    /// Ticks (counted as for [`ConfigEvent`]) at which the input link was lost.
    pub lost_events: Vec<u64>,
    pub metrics: RunMetrics,
}

impl RunRecord {
    pub fn new(setup: RunSetup) -> Self {
        RunRecord {
            setup,
            frames: Vec::new(),
            config_events: Vec::new(),
            lost_events: Vec::new(),
            metrics: RunMetrics::default(),
        }
    }

    /// Append the output of one tick.
    pub fn push(&mut self, out: &TickOutput) {
        let tick = out.frame.tick - 1;
        if let Some(change) = out.applied {
            self.config_events.push(ConfigEvent { tick, change });
        }
        if out.input_lost {
            self.lost_events.push(tick);
        }
        self.frames.push(out.frame);
    }

    /// Recompute metrics from the frames alone; `verdict` and the goal time
    /// come from a fresh judge pass over the logged states.
    pub fn compute_metrics(&self) -> RunMetrics {
        let mut judge = crate::course::Judge::new(self.setup.course.clone());
        for f in &self.frames {
            if let RunStatus::Finished { .. } = judge.step(&f.state) {
                break;
            }
        }
        let countdown = self.setup.course.countdown;
        let goal = judge.goal_time();
        let path = goal.map(|tg| {
            let pts: Vec<[f64; 2]> = self
                .frames
                .iter()
                .filter(|f| f.state.t >= countdown && f.state.t <= tg)
                .map(|f| [f.odometry.x, f.odometry.y])
                .collect();
            path_length(&pts)
        });
        let inputs: Vec<[f64; 2]> = self
            .frames
            .iter()
            .filter(|f| f.state.t >= countdown)
            .map(|f| [f.input.p_x, f.input.gamma_h])
            .collect();
        RunMetrics {
            verdict: judge.verdict(),
            completion_time: judge.completion_time(),
            path_length: path,
            motion_area: motion_area(&inputs),
            gains_changed: self.config_events.iter().any(|e| e.tick > 0),
        }
    }

    /// Logged pilot inputs in tick order.
    pub fn inputs(&self) -> impl Iterator<Item = &PilotInput> {
        self.frames.iter().map(|f| &f.input)
    }
}

/// Drive a fresh world with a scripted pilot until the judge decides or
/// `max_ticks` elapse. One new input sample is offered per tick.
pub fn run_scripted(setup: &RunSetup, pilot: &PilotProfile, max_ticks: Option<u64>) -> Result<RunRecord> {
    let mut world = World::new(setup.clone())?;
    let mut record = RunRecord::new(setup.clone());
    let countdown = setup.course.countdown;
    let limit = max_ticks.unwrap_or_else(|| default_tick_limit(setup));
    let mut seq = 0u64;
    while world.tick_count() < limit {
        let t = world.time();
        let (p_x, gamma_h) = pilot.sample(t - countdown);
        seq += 1;
        world.offer_input(PilotInput::new(p_x, gamma_h, t, seq))?;
        let out = world.tick()?;
        let done = out.events.iter().any(|e| matches!(e, WorldEvent::Verdict { .. }));
        record.push(&out);
        if done {
            break;
        }
    }
    record.metrics = record.compute_metrics();
    Ok(record)
}

fn default_tick_limit(setup: &RunSetup) -> u64 {
    let horizon = setup.course.countdown + setup.course.timeout + 5.0;
    libm::ceil(horizon / setup.sim.dt) as u64
}

/// Re-run a record's setup with its logged inputs and configuration changes.
/// Returns the regenerated record.
pub fn replay(record: &RunRecord) -> Result<RunRecord> {
    let mut world = World::new(record.setup.clone())?;
    let mut out = RunRecord::new(record.setup.clone());
    let mut events = record.config_events.iter().peekable();
    let mut lost = record.lost_events.iter().peekable();
    for (i, f) in record.frames.iter().enumerate() {
        while let Some(e) = events.next_if(|e| e.tick == i as u64) {
            world.queue_config(e.change)?;
        }
        while lost.next_if(|&&t| t == i as u64).is_some() {
            world.notify_input_lost();
        }
        if f.flags & crate::world::flags::INPUT_LATCHED != 0 {
            world.offer_input(f.input)?;
        }
        out.push(&world.tick()?);
    }
    out.metrics = out.compute_metrics();
    Ok(out)
}

/// First frame index where two frame sequences differ in any bit, if any.
pub fn first_divergence(a: &[Frame], b: &[Frame]) -> Option<usize> {
    let n = a.len().min(b.len());
    (0..n)
        .find(|&i| !frame_bits_equal(&a[i], &b[i]))
        .or(if a.len() != b.len() { Some(n) } else { None })
}

fn frame_bits_equal(a: &Frame, b: &Frame) -> bool {
    let bits = |f: &Frame| {
        let mut v: Vec<u64> = f.state.to_array().iter().map(|x| x.to_bits()).collect();
        v.extend(f.desired.to_array().iter().map(|x| x.to_bits()));
        v.extend([f.command.tau_left, f.command.tau_right, f.command.tau_hip].iter().map(|x| x.to_bits()));
        v.extend([f.input.p_x, f.input.gamma_h, f.input.t].iter().map(|x| x.to_bits()));
        v.extend([f.odometry.x, f.odometry.y, f.odometry.yaw].iter().map(|x| x.to_bits()));
        v.push(f.input.seq);
        v.push(f.tick);
        v.push(f.flags as u64);
        v
    };
    bits(a) == bits(b)
}
