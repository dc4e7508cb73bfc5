//! Live server: one simulation thread, network threads around it.
//!
//! Inbound items travel over a bounded channel that the simulation drains
//! between ticks without waiting. Outbound messages go into a fixed ring
//! that overwrites its oldest entry when full, so a slow client can never
//! hold up the simulation.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use anyhow::Context;
use crossbeam::queue::ArrayQueue;
use wip_core::world::RunSetup;

use crate::session::{ConnId, Inbound, Outbound, RunSummary, SessionCore, SessionOptions, Target};
use crate::wire::{read_frame, write_frame, WireError, WireMessage, MAX_FRAME};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Transport {
    /// Length-prefixed frames over TCP.
    Stream,
    /// One message per UDP datagram.
    Datagram,
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub setup: RunSetup,
    pub bind: SocketAddr,
    pub transport: Transport,
    /// Simulation ticks per wall-clock second; zero runs unpaced.
    pub rate_hz: f64,
    pub session: SessionOptions,
    pub inbound_capacity: usize,
    pub outbound_capacity: usize,
}

impl ServerConfig {
    pub fn new(setup: RunSetup, bind: SocketAddr) -> Self {
        let rate_hz = 1.0 / setup.sim.dt;
        ServerConfig {
            setup,
            bind,
            transport: Transport::Stream,
            rate_hz,
            session: SessionOptions::default(),
            inbound_capacity: 1024,
            outbound_capacity: 4096,
        }
    }
}

pub struct ServerHandle {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim: Option<JoinHandle<anyhow::Result<Vec<RunSummary>>>>,
    io: Vec<JoinHandle<()>>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    pub fn is_finished(&self) -> bool {
        self.sim.as_ref().is_none_or(|h| h.is_finished())
    }

    /// Wait for the simulation to end on its own (`max_runs`) or via the stop
    /// flag, then tear down the network threads.
    pub fn join(mut self) -> anyhow::Result<Vec<RunSummary>> {
        let result = match self.sim.take() {
            Some(h) => h.join().map_err(|_| anyhow::anyhow!("simulation thread panicked"))?,
            None => Ok(Vec::new()),
        };
        self.teardown();
        result
    }

    pub fn stop(self) -> anyhow::Result<Vec<RunSummary>> {
        self.stop.store(true, Ordering::SeqCst);
        self.join()
    }

    fn teardown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for s in self.streams.lock().expect("stream registry").drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        for h in self.io.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.sim.take() {
            let _ = h.join();
        }
        self.teardown();
    }
}

enum Sink {
    Tcp(BufWriter<TcpStream>),
    Udp(SocketAddr),
}

pub fn start(cfg: ServerConfig) -> anyhow::Result<ServerHandle> {
    cfg.setup.validate()?;
    anyhow::ensure!(cfg.rate_hz.is_finite() && cfg.rate_hz >= 0.0, "rate must be a non-negative number");
    let session = SessionCore::new(cfg.setup.clone(), cfg.session.clone())?;
    let stop = Arc::new(AtomicBool::new(false));
    let (in_tx, in_rx) = sync_channel::<Inbound>(cfg.inbound_capacity);
    let outbound = Arc::new(ArrayQueue::<Outbound>::new(cfg.outbound_capacity));
    let (sink_tx, sink_rx) = std::sync::mpsc::channel::<(ConnId, Sink)>();
    let streams = Arc::new(Mutex::new(Vec::new()));
    let mut io = Vec::new();

    let (local_addr, udp_send) = match cfg.transport {
        Transport::Stream => {
            let listener = TcpListener::bind(cfg.bind).with_context(|| format!("cannot listen on {}", cfg.bind))?;
            let addr = listener.local_addr()?;
            listener.set_nonblocking(true)?;
            let (stop, streams) = (stop.clone(), streams.clone());
            io.push(spawn("wip-accept", move || accept_loop(listener, in_tx, sink_tx, stop, streams))?);
            (addr, None)
        }
        Transport::Datagram => {
            let sock = UdpSocket::bind(cfg.bind).with_context(|| format!("cannot bind {}", cfg.bind))?;
            let addr = sock.local_addr()?;
            sock.set_read_timeout(Some(POLL))?;
            let send = sock.try_clone()?;
            let stop = stop.clone();
            io.push(spawn("wip-udp", move || udp_loop(sock, in_tx, sink_tx, stop))?);
            (addr, Some(send))
        }
    };

    let (stop2, out2) = (stop.clone(), outbound.clone());
    io.push(spawn("wip-send", move || dispatch_loop(out2, sink_rx, udp_send, stop2))?);
    let stop3 = stop.clone();
    let rate = cfg.rate_hz;
    let sim = thread::Builder::new()
        .name("wip-sim".into())
        .spawn(move || {
            let r = sim_loop(session, in_rx, &outbound, &stop3, rate);
            stop3.store(true, Ordering::SeqCst);
            r
        })?;
    log::info!("listening on {local_addr} ({:?})", cfg.transport);
    Ok(ServerHandle { local_addr, stop, sim: Some(sim), io, streams })
}

const POLL: Duration = Duration::from_millis(20);

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> std::io::Result<JoinHandle<()>> {
    thread::Builder::new().name(name.into()).spawn(f)
}

fn sim_loop(
    mut session: SessionCore,
    inbound: Receiver<Inbound>,
    outbound: &ArrayQueue<Outbound>,
    stop: &AtomicBool,
    rate_hz: f64,
) -> anyhow::Result<Vec<RunSummary>> {
    let start = Instant::now();
    let mut out = Vec::new();
    let mut ticks: u64 = 0;
    while !stop.load(Ordering::SeqCst) && !session.is_done() {
        while let Ok(item) = inbound.try_recv() {
            session.handle(item, &mut out);
        }
        session.tick(&mut out)?;
        ticks += 1;
        for o in out.drain(..) {
            outbound.force_push(o);
        }
        if rate_hz > 0.0 {
            let due = start + Duration::from_secs_f64(ticks as f64 / rate_hz);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
    }
    session.shutdown()
}

fn accept_loop(
    listener: TcpListener,
    inbound: SyncSender<Inbound>,
    sinks: std::sync::mpsc::Sender<(ConnId, Sink)>,
    stop: Arc<AtomicBool>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
) {
    let next_id = AtomicU64::new(1);
    while !stop.load(Ordering::SeqCst) {
        let (stream, peer) = match listener.accept() {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                thread::sleep(POLL);
                continue;
            }
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(POLL);
                continue;
            }
        };
        let conn = next_id.fetch_add(1, Ordering::SeqCst);
        log::info!("connection {conn} from {peer}");
        let setup = (|| -> std::io::Result<(TcpStream, TcpStream)> {
            stream.set_nonblocking(false)?;
            stream.set_nodelay(true)?;
            stream.set_write_timeout(Some(Duration::from_secs(1)))?;
            Ok((stream.try_clone()?, stream.try_clone()?))
        })();
        let (reader, registry) = match setup {
            Ok(pair) => pair,
            Err(e) => {
                log::warn!("connection {conn}: {e}");
                continue;
            }
        };
        streams.lock().expect("stream registry").push(registry);
        if sinks.send((conn, Sink::Tcp(BufWriter::new(stream)))).is_err() {
            return;
        }
        if inbound.send(Inbound::Connected { conn }).is_err() {
            return;
        }
        let tx = inbound.clone();
        let _ = spawn("wip-read", move || read_loop(conn, reader, tx));
    }
}

fn read_loop(conn: ConnId, stream: TcpStream, inbound: SyncSender<Inbound>) {
    let mut r = BufReader::new(stream);
    loop {
        let item = match read_frame(&mut r) {
            Ok(Some(body)) => decode(conn, &body),
            Ok(None) => break,
            Err(WireError::TooLarge(n)) => {
                let _ = inbound.send(Inbound::Malformed { conn, reason: format!("frame of {n} bytes exceeds {MAX_FRAME}") });
                break;
            }
            Err(_) => break,
        };
        if inbound.send(item).is_err() {
            return;
        }
    }
    let _ = inbound.send(Inbound::Disconnected { conn });
}

fn decode(conn: ConnId, body: &[u8]) -> Inbound {
    match WireMessage::from_bytes(body) {
        Ok(msg) => Inbound::Message { conn, msg },
        Err(e) => Inbound::Malformed { conn, reason: e.to_string() },
    }
}

fn udp_loop(
    sock: UdpSocket,
    inbound: SyncSender<Inbound>,
    sinks: std::sync::mpsc::Sender<(ConnId, Sink)>,
    stop: Arc<AtomicBool>,
) {
    let mut peers: HashMap<SocketAddr, ConnId> = HashMap::new();
    let mut buf = vec![0u8; 65536];
    while !stop.load(Ordering::SeqCst) {
        let (n, peer) = match sock.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => continue,
            Err(e) => {
                log::warn!("udp receive failed: {e}");
                continue;
            }
        };
        let conn = match peers.get(&peer) {
            Some(&c) => c,
            None => {
                let c = peers.len() as ConnId + 1;
                peers.insert(peer, c);
                if sinks.send((c, Sink::Udp(peer))).is_err() || inbound.send(Inbound::Connected { conn: c }).is_err() {
                    return;
                }
                c
            }
        };
        if inbound.send(decode(conn, &buf[..n])).is_err() {
            return;
        }
    }
}

fn dispatch_loop(
    outbound: Arc<ArrayQueue<Outbound>>,
    new_sinks: Receiver<(ConnId, Sink)>,
    udp: Option<UdpSocket>,
    stop: Arc<AtomicBool>,
) {
    let mut sinks: Vec<(ConnId, Sink)> = Vec::new();
    loop {
        let stopping = stop.load(Ordering::SeqCst);
        while let Ok(s) = new_sinks.try_recv() {
            sinks.push(s);
        }
        let mut sent_any = false;
        while let Some(o) = outbound.pop() {
            sent_any = true;
            let bytes_for_udp = o.msg.to_bytes();
            sinks.retain_mut(|(id, sink)| {
                if let Target::Conn(c) = o.target {
                    if c != *id {
                        return true;
                    }
                }
                match sink {
                    Sink::Tcp(w) => write_frame(w, &o.msg).is_ok(),
                    Sink::Udp(peer) => {
                        if let Some(sock) = &udp {
                            let _ = sock.send_to(&bytes_for_udp, *peer);
                        }
                        true
                    }
                }
            });
        }
        if stopping {
            break;
        }
        if !sent_any {
            thread::sleep(Duration::from_millis(1));
        }
    }
}
