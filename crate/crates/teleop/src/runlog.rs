//! Line-delimited run logs.
//!
//! ```text
//! wiprun 1
//! setup {RunSetup as JSON}
//! config <tick> {ConfigChange as JSON}
//! lost <tick>
//! frame <32 space-separated fields>
//! end {metrics as JSON}
//! ```
//!
//! `config` and `lost` lines precede the frame they affect; `<tick>` is the
//! number of frames written before them. Frame fields, in order:
//!
//! ```text
//! tick t x_w pitch xdot_w pitch_rate y x yaw yaw_rate hip hip_rate
//! wheel_left wheel_right p_x gamma_h input_t seq x_des xdot_des pitch_des
//! pitch_rate_des yaw_des yaw_rate_des hip_des tau_left tau_right tau_hip
//! flags odo_x odo_y odo_yaw
//! ```
//!
//! Floats use the shortest representation that parses back to the same bits.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use wip_core::control::DesiredState;
use wip_core::course::{Pose2, Verdict};
use wip_core::mapping::PilotInput;
use wip_core::model::{ActuatorCommand, SimState};
use wip_core::record::{ConfigEvent, RunMetrics, RunRecord};
use wip_core::world::{ConfigChange, Frame, RunSetup};

pub const MAGIC: &str = "wiprun";
pub const VERSION: u32 = 1;
pub const FRAME_FIELDS: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a run log (missing `{MAGIC}` header)")]
    NotALog,
    #[error("unsupported log version {found} (this build reads version {VERSION})")]
    Version { found: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("log truncated at line {line}: last valid frame is {}", last_frame_label(*.last_frame))]
    Truncated { line: usize, last_frame: Option<u64> },
}

fn last_frame_label(f: Option<u64>) -> String {
    match f {
        Some(t) => format!("tick {t}"),
        None => "none".to_string(),
    }
}

/// Footer payload.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsLine {
    pub verdict: Option<Verdict>,
    pub completion_time: Option<f64>,
    pub path_length: Option<f64>,
    pub motion_area: f64,
    pub gains_changed: bool,
}

impl From<RunMetrics> for MetricsLine {
    fn from(m: RunMetrics) -> Self {
        MetricsLine {
            verdict: m.verdict,
            completion_time: m.completion_time,
            path_length: m.path_length,
            motion_area: m.motion_area,
            gains_changed: m.gains_changed,
        }
    }
}

impl From<MetricsLine> for RunMetrics {
    fn from(m: MetricsLine) -> Self {
        RunMetrics {
            verdict: m.verdict,
            completion_time: m.completion_time,
            path_length: m.path_length,
            motion_area: m.motion_area,
            gains_changed: m.gains_changed,
        }
    }
}

/// One-line human summary of a run's outcome.
pub fn verdict_line(m: &RunMetrics) -> String {
    let verdict = match m.verdict {
        Some(Verdict::Collision { cone }) => format!("collision(cone {cone})"),
        Some(v) => v.label().to_string(),
        None => "unfinished".to_string(),
    };
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    format!(
        "verdict={verdict} completion_time={} path_length={} motion_area={:.6}{}",
        opt(m.completion_time),
        opt(m.path_length),
        m.motion_area,
        if m.gains_changed { " gains_changed" } else { "" }
    )
}

pub fn format_frame(f: &Frame) -> String {
    let mut s = String::with_capacity(512);
    s.push_str("frame ");
    write!(s, "{}", f.tick).unwrap();
    let floats = f
        .state
        .to_array()
        .into_iter()
        .skip(12)
        .chain(f.state.to_array().into_iter().take(12))
        .chain([f.input.p_x, f.input.gamma_h, f.input.t]);
    for v in floats {
        write!(s, " {v}").unwrap();
    }
    write!(s, " {}", f.input.seq).unwrap();
    for v in f.desired.to_array() {
        write!(s, " {v}").unwrap();
    }
    for v in [f.command.tau_left, f.command.tau_right, f.command.tau_hip] {
        write!(s, " {v}").unwrap();
    }
    write!(s, " {}", f.flags).unwrap();
    for v in [f.odometry.x, f.odometry.y, f.odometry.yaw] {
        write!(s, " {v}").unwrap();
    }
    s
}

pub fn parse_frame(body: &str) -> Result<Frame, String> {
    let fields: Vec<&str> = body.split_ascii_whitespace().collect();
    if fields.len() != FRAME_FIELDS {
        return Err(format!("frame has {} fields, expected {FRAME_FIELDS}", fields.len()));
    }
    let f64_at = |i: usize| -> Result<f64, String> {
        fields[i].parse::<f64>().map_err(|e| format!("field {} ({:?}): {e}", i + 1, fields[i]))
    };
    let u64_at = |i: usize| -> Result<u64, String> {
        fields[i].parse::<u64>().map_err(|e| format!("field {} ({:?}): {e}", i + 1, fields[i]))
    };
    let tick = u64_at(0)?;
    let t = f64_at(1)?;
    let mut st = [0.0; 13];
    for (k, slot) in st.iter_mut().take(12).enumerate() {
        *slot = f64_at(2 + k)?;
    }
    st[12] = t;
    let input = PilotInput { p_x: f64_at(14)?, gamma_h: f64_at(15)?, t: f64_at(16)?, seq: u64_at(17)? };
    let mut d = [0.0; 7];
    for (k, slot) in d.iter_mut().enumerate() {
        *slot = f64_at(18 + k)?;
    }
    let command = ActuatorCommand { tau_left: f64_at(25)?, tau_right: f64_at(26)?, tau_hip: f64_at(27)? };
    let flags = fields[28].parse::<u8>().map_err(|e| format!("field 29 ({:?}): {e}", fields[28]))?;
    let odometry = Pose2 { x: f64_at(29)?, y: f64_at(30)?, yaw: f64_at(31)? };
    Ok(Frame {
        tick,
        state: SimState::from_array(st),
        input,
        desired: DesiredState::from_array(d),
        command,
        flags,
        odometry,
    })
}

/// Streaming writer. Nothing is flushed until [`LogWriter::finish`] or the
/// buffer fills.
pub struct LogWriter<W: Write> {
    out: W,
    frames: u64,
}

impl LogWriter<BufWriter<File>> {
    pub fn create(path: &Path, setup: &RunSetup) -> io::Result<Self> {
        LogWriter::new(BufWriter::new(File::create(path)?), setup)
    }
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W, setup: &RunSetup) -> io::Result<Self> {
        writeln!(out, "{MAGIC} {VERSION}")?;
        writeln!(out, "setup {}", serde_json::to_string(setup).map_err(io::Error::other)?)?;
        Ok(LogWriter { out, frames: 0 })
    }

    pub fn config(&mut self, change: &ConfigChange) -> io::Result<()> {
        writeln!(self.out, "config {} {}", self.frames, serde_json::to_string(change).map_err(io::Error::other)?)
    }

    pub fn lost(&mut self) -> io::Result<()> {
        writeln!(self.out, "lost {}", self.frames)
    }

    pub fn frame(&mut self, f: &Frame) -> io::Result<()> {
        self.frames += 1;
        writeln!(self.out, "{}", format_frame(f))
    }

    pub fn finish(mut self, metrics: &RunMetrics) -> io::Result<W> {
        let m = MetricsLine::from(*metrics);
        writeln!(self.out, "end {}", serde_json::to_string(&m).map_err(io::Error::other)?)?;
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn write_log<W: Write>(out: W, record: &RunRecord) -> io::Result<W> {
    let mut w = LogWriter::new(out, &record.setup)?;
    let mut configs = record.config_events.iter().peekable();
    let mut lost = record.lost_events.iter().peekable();
    for (i, f) in record.frames.iter().enumerate() {
        while let Some(e) = configs.next_if(|e| e.tick == i as u64) {
            w.config(&e.change)?;
        }
        while lost.next_if(|&&t| t == i as u64).is_some() {
            w.lost()?;
        }
        w.frame(f)?;
    }
    w.finish(&record.metrics)
}

pub fn write_log_file(path: &Path, record: &RunRecord) -> io::Result<()> {
    write_log(BufWriter::new(File::create(path)?), record).map(|_| ())
}

pub fn read_log<R: BufRead>(mut input: R) -> Result<RunRecord, LogError> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let mut head = header.split_ascii_whitespace();
    if head.next() != Some(MAGIC) {
        return Err(LogError::NotALog);
    }
    let version = head.next().unwrap_or("");
    if version != VERSION.to_string() {
        return Err(LogError::Version { found: version.to_string() });
    }

    let mut record: Option<RunRecord> = None;
    let mut last_frame: Option<u64> = None;
    let mut line_no = 1;
    let mut buf = String::new();
    loop {
        buf.clear();
        if input.read_line(&mut buf)? == 0 {
            break;
        }
        line_no += 1;
        // Every record ends in a newline; a line without one was cut short.
        let Some(line) = buf.strip_suffix('\n') else {
            return Err(LogError::Truncated { line: line_no, last_frame });
        };
        if line.is_empty() {
            continue;
        }
        let (kind, body) = line.split_once(' ').unwrap_or((line, ""));
        let parse_err = |message: String| LogError::Parse { line: line_no, message };
        match (kind, record.as_mut()) {
            ("setup", None) => {
                let setup: RunSetup = serde_json::from_str(body).map_err(|e| parse_err(format!("setup: {e}")))?;
                record = Some(RunRecord::new(setup));
            }
            ("setup", Some(_)) => return Err(parse_err("duplicate setup line".into())),
            (_, None) => return Err(parse_err(format!("`{kind}` before setup"))),
            ("frame", Some(r)) => {
                let f = parse_frame(body).map_err(parse_err)?;
                let expected = r.frames.len() as u64 + 1;
                if f.tick != expected {
                    return Err(parse_err(format!("frame tick {} out of order, expected {expected}", f.tick)));
                }
                last_frame = Some(f.tick);
                r.frames.push(f);
            }
            ("config", Some(r)) => {
                let (tick, json) = body.split_once(' ').ok_or_else(|| parse_err("config needs tick and body".into()))?;
                let tick = parse_tick(tick, r).map_err(parse_err)?;
                let change: ConfigChange =
                    serde_json::from_str(json).map_err(|e| parse_err(format!("config: {e}")))?;
                r.config_events.push(ConfigEvent { tick, change });
            }
            ("lost", Some(r)) => {
                let tick = parse_tick(body.trim(), r).map_err(parse_err)?;
                r.lost_events.push(tick);
            }
            ("end", Some(r)) => {
                let m: MetricsLine = serde_json::from_str(body).map_err(|e| parse_err(format!("end: {e}")))?;
                r.metrics = m.into();
                return Ok(record.take().expect("record present"));
            }
            (other, Some(_)) => return Err(parse_err(format!("unknown record kind `{other}`"))),
        }
    }
    Err(LogError::Truncated { line: line_no, last_frame })
}

fn parse_tick(s: &str, r: &RunRecord) -> Result<u64, String> {
    let tick: u64 = s.parse().map_err(|e| format!("tick {s:?}: {e}"))?;
    if tick != r.frames.len() as u64 {
        return Err(format!("event tick {tick} does not match frame count {}", r.frames.len()));
    }
    Ok(tick)
}

pub fn read_log_file(path: &Path) -> Result<RunRecord, LogError> {
    read_log(BufReader::new(File::open(path)?))
}
