//! Protocol handling around a live world. Runs on the simulation thread;
//! network threads only feed it [`Inbound`] items and drain its
//! [`Outbound`] messages.

use std::path::PathBuf;
use std::thread::JoinHandle;

use crossbeam::channel::{bounded, Sender};
use wip_core::course::Verdict;
use wip_core::mapping::MappingConfig;
use wip_core::record::RunRecord;
use wip_core::synthesis::GainSet;
use wip_core::world::{ConfigChange, Frame, InputAck, RunSetup, TickOutput, World, WorldEvent};

use crate::runlog::LogWriter;
use crate::wire::{
    resolve_config, AckOf, AckPayload, ConfigPayload, EventPayload, MessageType, Role, WireMessage,
};

pub type ConnId = u64;

#[derive(Clone, Debug, PartialEq)]
pub enum Inbound {
    Connected { conn: ConnId },
    Message { conn: ConnId, msg: WireMessage },
    /// Bytes arrived that did not decode to a message.
    Malformed { conn: ConnId, reason: String },
    Disconnected { conn: ConnId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    All,
    Conn(ConnId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outbound {
    pub target: Target,
    pub msg: WireMessage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionOptions {
    /// State broadcast rate, Hz.
    pub telemetry_hz: f64,
    /// Directory for one log file per run.
    pub log_dir: Option<PathBuf>,
    /// Stop after this many finished runs.
    pub max_runs: Option<u64>,
    /// Frames buffered between the simulation and the log writer.
    pub log_queue: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions { telemetry_hz: 60.0, log_dir: None, max_runs: None, log_queue: 1 << 16 }
    }
}

enum LogItem {
    Config(ConfigChange),
    Lost,
    Frame(Frame),
    End(wip_core::record::RunMetrics),
}

/// Log file fed from the simulation thread through a bounded channel. Items
/// are never dropped: when the channel is full, the sender waits.
struct LogThread {
    tx: Sender<LogItem>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl LogThread {
    fn start(path: PathBuf, setup: &RunSetup, capacity: usize) -> std::io::Result<Self> {
        let mut w = LogWriter::create(&path, setup)?;
        let (tx, rx) = bounded::<LogItem>(capacity);
        let handle = std::thread::Builder::new().name("wip-log".into()).spawn(move || {
            for item in rx {
                match item {
                    LogItem::Config(c) => w.config(&c)?,
                    LogItem::Lost => w.lost()?,
                    LogItem::Frame(f) => w.frame(&f)?,
                    LogItem::End(m) => {
                        w.finish(&m)?;
                        return Ok(());
                    }
                }
            }
            Ok(())
        })?;
        Ok(LogThread { tx, handle })
    }

    fn send(&self, item: LogItem) {
        if self.tx.send(item).is_err() {
            log::error!("log writer stopped early");
        }
    }

    /// Queue the footer and hand back the writer thread for joining later.
    fn finish(self, metrics: wip_core::record::RunMetrics) -> JoinHandle<std::io::Result<()>> {
        self.send(LogItem::End(metrics));
        self.handle
    }
}

/// Result of a finished run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub run: u64,
    pub metrics: wip_core::record::RunMetrics,
    pub log: Option<PathBuf>,
}

pub struct SessionCore {
    initial: RunSetup,
    opts: SessionOptions,
    world: World,
    record: RunRecord,
    log: Option<LogThread>,
    closing: Vec<JoinHandle<std::io::Result<()>>>,
    log_path: Option<PathBuf>,
    run: u64,
    pilot: Option<ConnId>,
    /// Mapping and gains in force once queued changes land.
    mapping: MappingConfig,
    gains: GainSet,
    out_seq: u64,
    next_state_t: f64,
    finished: Vec<RunSummary>,
}

impl SessionCore {
    pub fn new(setup: RunSetup, opts: SessionOptions) -> anyhow::Result<Self> {
        anyhow::ensure!(opts.telemetry_hz > 0.0, "telemetry rate must be positive");
        if let Some(dir) = &opts.log_dir {
            std::fs::create_dir_all(dir)?;
        }
        let world = World::new(setup.clone())?;
        let mut s = SessionCore {
            mapping: setup.mapping,
            gains: setup.gains,
            record: RunRecord::new(setup.clone()),
            initial: setup,
            opts,
            world,
            log: None,
            closing: Vec::new(),
            log_path: None,
            run: 0,
            pilot: None,
            out_seq: 0,
            next_state_t: 0.0,
            finished: Vec::new(),
        };
        s.start_run(&mut Vec::new())?;
        Ok(s)
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn run_number(&self) -> u64 {
        self.run
    }

    pub fn pilot(&self) -> Option<ConnId> {
        self.pilot
    }

    pub fn finished_runs(&self) -> &[RunSummary] {
        &self.finished
    }

    /// True once `max_runs` runs have ended.
    pub fn is_done(&self) -> bool {
        self.opts.max_runs.is_some_and(|n| self.finished.len() as u64 >= n)
    }

    fn next_seq(&mut self) -> u64 {
        self.out_seq += 1;
        self.out_seq
    }

    fn emit(&mut self, out: &mut Vec<Outbound>, target: Target, kind: MessageType, payload: impl serde::Serialize) {
        let msg = WireMessage::new(kind, self.next_seq(), self.world.time(), payload);
        out.push(Outbound { target, msg });
    }

    fn start_run(&mut self, out: &mut Vec<Outbound>) -> anyhow::Result<()> {
        self.run += 1;
        let setup = RunSetup { mapping: self.mapping, gains: self.gains, ..self.initial.clone() };
        self.world = World::new(setup.clone())?;
        self.record = RunRecord::new(setup.clone());
        self.next_state_t = 0.0;
        if let Some(dir) = &self.opts.log_dir {
            let path = dir.join(format!("run-{:03}.wiplog", self.run));
            self.log = Some(LogThread::start(path.clone(), &setup, self.opts.log_queue)?);
            self.log_path = Some(path);
        }
        self.emit(out, Target::All, MessageType::Event, EventPayload::RunStarted { run: self.run });
        Ok(())
    }

    fn end_run(&mut self, out: &mut Vec<Outbound>) -> anyhow::Result<()> {
        let metrics = self.record.compute_metrics();
        if let Some(log) = self.log.take() {
            self.closing.push(log.finish(metrics));
        }
        if let Some(verdict) = metrics.verdict {
            let e = EventPayload::RunFinished {
                run: self.run,
                verdict,
                completion_time: metrics.completion_time,
                path_length: metrics.path_length,
            };
            self.emit(out, Target::All, MessageType::Event, e);
        }
        self.finished.push(RunSummary { run: self.run, metrics, log: self.log_path.take() });
        Ok(())
    }

    /// Process one inbound item between ticks.
    pub fn handle(&mut self, item: Inbound, out: &mut Vec<Outbound>) {
        match item {
            Inbound::Connected { conn } => {
                let role = if self.pilot.is_none() {
                    self.pilot = Some(conn);
                    Role::Pilot
                } else {
                    Role::Observer
                };
                log::info!("connection {conn} joined as {role:?}");
                self.emit(out, Target::Conn(conn), MessageType::Event, EventPayload::Hello { role });
            }
            Inbound::Disconnected { conn } => {
                if self.pilot == Some(conn) {
                    log::warn!("pilot connection {conn} lost");
                    self.pilot = None;
                    self.world.notify_input_lost();
                }
            }
            Inbound::Malformed { conn, reason } => {
                self.emit(out, Target::Conn(conn), MessageType::Event, EventPayload::Malformed { reason });
            }
            Inbound::Message { conn, msg } => self.handle_message(conn, msg, out),
        }
    }

    fn handle_message(&mut self, conn: ConnId, msg: WireMessage, out: &mut Vec<Outbound>) {
        match msg.kind {
            MessageType::Input => {
                let reject = |reason: String, last_seq: Option<u64>| AckPayload {
                    of: AckOf::Input,
                    ack_seq: msg.seq,
                    accepted: false,
                    last_seq,
                    reason: Some(reason),
                    mapping: None,
                    gains: None,
                };
                if self.pilot != Some(conn) {
                    let a = reject("only the pilot connection may send input".into(), self.world.last_seq());
                    return self.emit(out, Target::Conn(conn), MessageType::Ack, a);
                }
                let result = msg
                    .pilot_input()
                    .map_err(|e| e.to_string())
                    .and_then(|i| self.world.offer_input(i).map_err(|e| e.to_string()));
                let ack = match result {
                    // Accepted inputs show up in the state stream; only refusals are acknowledged.
                    Ok(InputAck::Accepted { .. }) => return,
                    Ok(InputAck::Dropped { last }) => reject("sequence number did not increase".into(), last),
                    Err(reason) => reject(reason, self.world.last_seq()),
                };
                self.emit(out, Target::Conn(conn), MessageType::Ack, ack);
            }
            MessageType::Config => {
                let initial = (&self.initial.mapping, &self.initial.gains);
                let result = msg
                    .payload_as::<ConfigPayload>()
                    .and_then(|p| resolve_config(&p, (&self.mapping, &self.gains), initial))
                    .map_err(|e| e.to_string())
                    .and_then(|c| self.world.queue_config(c).map(|_| c).map_err(|e| e.to_string()));
                let ack = match result {
                    Ok(c) => {
                        self.mapping = c.mapping.unwrap_or(self.mapping);
                        self.gains = c.gains.unwrap_or(self.gains);
                        AckPayload {
                            of: AckOf::Config,
                            ack_seq: msg.seq,
                            accepted: true,
                            last_seq: None,
                            reason: None,
                            mapping: Some(self.mapping),
                            gains: Some(self.gains),
                        }
                    }
                    Err(reason) => AckPayload {
                        of: AckOf::Config,
                        ack_seq: msg.seq,
                        accepted: false,
                        last_seq: None,
                        reason: Some(reason),
                        mapping: Some(self.mapping),
                        gains: Some(self.gains),
                    },
                };
                self.emit(out, Target::Conn(conn), MessageType::Ack, ack);
            }
            other => {
                let reason = format!("clients may not send {other:?} messages");
                self.emit(out, Target::Conn(conn), MessageType::Event, EventPayload::Malformed { reason });
            }
        }
    }

    /// Advance one tick. Returns the tick output; a verdict closes the run
    /// and starts the next one.
    pub fn tick(&mut self, out: &mut Vec<Outbound>) -> anyhow::Result<TickOutput> {
        let t = self.world.tick()?;
        if let Some(log) = &self.log {
            if let Some(c) = t.applied {
                log.send(LogItem::Config(c));
            }
            if t.input_lost {
                log.send(LogItem::Lost);
            }
            log.send(LogItem::Frame(t.frame));
        }
        self.record.push(&t);
        let mut verdict: Option<Verdict> = None;
        for e in &t.events {
            if let WorldEvent::Verdict { verdict: v, .. } = e {
                verdict = Some(*v);
            }
            self.emit(out, Target::All, MessageType::Event, EventPayload::World(*e));
        }
        let now = self.world.time();
        if now + 1e-9 >= self.next_state_t {
            let tel = self.world.telemetry();
            self.emit(out, Target::All, MessageType::State, tel);
            self.next_state_t += 1.0 / self.opts.telemetry_hz;
        }
        if verdict.is_some() {
            self.end_run(out)?;
            if !self.is_done() {
                self.start_run(out)?;
            }
        }
        Ok(t)
    }

    /// Close the current run's log, if one is open, and wait for every log
    /// file to be written.
    pub fn shutdown(mut self) -> anyhow::Result<Vec<RunSummary>> {
        if self.log.is_some() {
            self.end_run(&mut Vec::new())?;
        }
        for h in self.closing.drain(..) {
            h.join().map_err(|_| anyhow::anyhow!("log writer panicked"))??;
        }
        Ok(self.finished)
    }
}
