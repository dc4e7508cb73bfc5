use std::io::{self, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use wip_core::linalg::Complex;
use wip_core::model::RobotParams;
use wip_core::record::{first_divergence, replay};
use wip_core::synthesis::{closed_loop, discretize, linearize, synthesize, GainSet};
use wip_core::world::{RunSetup, SimConfig};
use wip_teleop::bench::{run_bench, write_csv, BenchOptions, BenchSummary, PilotKind};
use wip_teleop::config::{self, GainSource, GainsFile};
use wip_teleop::runlog::{read_log_file, verdict_line, write_log_file};
use wip_teleop::server::{self, ServerConfig, Transport};
use wip_teleop::session::SessionOptions;

/// Wheeled inverted pendulum simulator and teleoperation server.
///
/// Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
#[derive(Parser, Debug)]
#[command(name = "wipsim", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Robot parameter file (TOML). Built-in defaults otherwise.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// Mapping preset (velocity, acceleration, sprint) or TOML file.
    #[arg(long, global = true, default_value = "velocity")]
    mapping: String,
    /// Gain file (TOML). Synthesized from default weights otherwise.
    #[arg(long, global = true)]
    gains: Option<PathBuf>,
    /// Course preset (3-cone, straight-line) or TOML file.
    #[arg(long, global = true)]
    course: Option<String>,
    /// Simulation ticks per wall-clock second for `serve`; 0 runs unpaced.
    #[arg(long, global = true)]
    rate: Option<f64>,
    /// Server port.
    #[arg(long, global = true, env = "WIP_PORT", default_value_t = 7400)]
    port: u16,
    /// Directory for run logs.
    #[arg(long, global = true, env = "WIP_LOG_DIR")]
    log: Option<PathBuf>,
    /// Run the controller every k-th tick.
    #[arg(long, global = true)]
    controller_divisor: Option<u32>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Live session for a remote pilot and observers.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, value_enum, default_value_t = Transport::Stream)]
        transport: Transport,
        /// State broadcast rate, Hz.
        #[arg(long, default_value_t = 60.0)]
        telemetry_hz: f64,
        /// Exit after this many finished runs.
        #[arg(long)]
        max_runs: Option<u64>,
    },
    /// Headless scripted runs; CSV on stdout, summary on stderr.
    Bench {
        #[arg(long, value_enum, default_value_t = PilotKind::Straightline)]
        pilot: PilotKind,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Relative spread of per-run timing jitter.
        #[arg(long, default_value_t = 0.02)]
        time_jitter: f64,
        /// Relative spread of per-run lean jitter.
        #[arg(long, default_value_t = 0.02)]
        amp_jitter: f64,
    },
    /// Synthesize the balance gain and print it as a gain file.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Eigenvalues and spectral radius of the open and closed loop.
    Analyze {
        #[arg(long)]
        csv: bool,
    },
    /// Re-run a logged session and check it reproduces bit for bit.
    Replay { log: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_setup(c: &Common, default_course: &str) -> anyhow::Result<RunSetup> {
    let params = match &c.params {
        Some(p) => config::load_params(p)?,
        None => RobotParams::default(),
    };
    let gains = match &c.gains {
        Some(g) => config::load_gains(g, &params)?,
        None => GainSet::synthesized(&params).context("default gain synthesis")?,
    };
    let mapping = config::resolve_mapping(&c.mapping)?;
    let course = config::resolve_course(c.course.as_deref().unwrap_or(default_course))?;
    let mut sim = SimConfig::default();
    if let Some(k) = c.controller_divisor {
        sim.controller_divisor = k;
    }
    let setup = RunSetup { params, gains, mapping, course, sim };
    setup.validate()?;
    Ok(setup)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let c = &cli.common;
    match cli.cmd {
        Command::Serve { host, transport, telemetry_hz, max_runs } => {
            let setup = load_setup(c, "3-cone")?;
            let mut cfg = ServerConfig::new(setup, SocketAddr::new(host, c.port));
            cfg.transport = transport;
            if let Some(r) = c.rate {
                cfg.rate_hz = r;
            }
            cfg.session = SessionOptions { telemetry_hz, log_dir: c.log.clone(), max_runs, ..Default::default() };
            let handle = server::start(cfg)?;
            eprintln!("wipsim: serving on {}", handle.local_addr());
            for r in handle.join()? {
                println!("run {}: {}", r.run, verdict_line(&r.metrics));
            }
        }
        Command::Bench { pilot, runs, seed, time_jitter, amp_jitter } => {
            let default_course = match pilot {
                PilotKind::Straightline => "straight-line",
                _ => "3-cone",
            };
            let setup = load_setup(c, default_course)?;
            let profile = pilot.profile(&setup)?;
            if let Some(dir) = &c.log {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let opts = BenchOptions { runs, seed, time_jitter, amp_jitter, max_ticks: None };
            let mut log_err = None;
            let rows = run_bench(&setup, &profile, &opts, |row, record| {
                if let (Some(dir), None) = (&c.log, &log_err) {
                    let path = dir.join(format!("bench-{:03}.wiplog", row.run));
                    if let Err(e) = write_log_file(&path, record) {
                        log_err = Some(anyhow::Error::new(e).context(format!("writing {}", path.display())));
                    }
                }
            })?;
            if let Some(e) = log_err {
                return Err(e);
            }
            write_csv(&rows, io::stdout().lock())?;
            BenchSummary::from_rows(&rows).write_to(io::stderr().lock())?;
        }
        Command::Synth { out } => {
            let params = match &c.params {
                Some(p) => config::load_params(p)?,
                None => RobotParams::default(),
            };
            let base = match &c.gains {
                Some(g) => toml::from_str::<GainsFile>(&std::fs::read_to_string(g)?)?,
                None => GainsFile::default(),
            };
            let s = synthesize(&params, &base.weights.into(), base.sample_time)?;
            let file = GainsFile { source: GainSource::Explicit, k: Some(s.k), ..base };
            let text = format!(
                "# closed-loop spectral radius {:.6} at Ts = {} s\n{}",
                s.closed_loop_radius,
                base.sample_time,
                toml::to_string(&file)?
            );
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
        Command::Analyze { csv } => {
            let setup = load_setup(c, "3-cone")?;
            analyze(&setup, csv, &mut io::stdout().lock())?;
        }
        Command::Replay { log } => return replay_cmd(&log),
    }
    Ok(ExitCode::SUCCESS)
}

fn analyze(setup: &RunSetup, csv: bool, out: &mut impl Write) -> anyhow::Result<()> {
    let ts = setup.sim.controller_period();
    let model = discretize(&linearize(&setup.params)?, ts)?;
    let rows: [(&str, [Complex; 4]); 3] = [
        ("open_loop_continuous", model.a.eigenvalues()),
        ("open_loop_discrete", model.a_d.eigenvalues()),
        ("closed_loop_discrete", closed_loop(&model, &setup.gains.k).eigenvalues()),
    ];
    let radius = |e: &[Complex; 4]| e.iter().map(|z| z.abs()).fold(0.0, f64::max);
    if csv {
        writeln!(out, "system,index,re,im,abs")?;
        for (name, eig) in &rows {
            for (i, z) in eig.iter().enumerate() {
                writeln!(out, "{name},{i},{},{},{}", z.re, z.im, z.abs())?;
            }
        }
    } else {
        writeln!(out, "K = {:?}  (Ts = {ts} s)", setup.gains.k)?;
        for (name, eig) in &rows {
            writeln!(out, "{name}:")?;
            for z in eig {
                writeln!(out, "  {:+.6} {:+.6}i  |{:.6}|", z.re, z.im, z.abs())?;
            }
        }
        let rho = radius(&rows[2].1);
        writeln!(out, "closed-loop spectral radius {rho:.6} ({})", if rho < 1.0 { "stable" } else { "UNSTABLE" })?;
    }
    Ok(())
}

fn replay_cmd(path: &Path) -> anyhow::Result<ExitCode> {
    let logged = read_log_file(path).with_context(|| format!("reading {}", path.display()))?;
    let again = replay(&logged)?;
    if let Some(i) = first_divergence(&logged.frames, &again.frames) {
        eprintln!("replay diverged at frame {} of {}", i + 1, logged.frames.len());
        println!("{}", verdict_line(&again.metrics));
        return Ok(ExitCode::from(2));
    }
    let line = verdict_line(&again.metrics);
    if line != verdict_line(&logged.metrics) {
        eprintln!("replayed metrics differ from the logged ones: {}", verdict_line(&logged.metrics));
        println!("{line}");
        return Ok(ExitCode::from(2));
    }
    eprintln!("replay: {} frames identical", again.frames.len());
    println!("{line}");
    Ok(ExitCode::SUCCESS)
}
