//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any failed. Everything here runs headless.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wip_core::control::{compose_command, stabilize, DesiredState};
use wip_core::course::{CourseSpec, PilotProfile, Rect, Verdict};
use wip_core::linalg::Mat;
use wip_core::mapping::{
    piecewise_eval, tilt_from_pitch, AccelIntegrator, AccelMapConfig, MappingConfig, MappingMode,
    PiecewiseMapConfig, PilotInput,
};
use wip_core::model::{mechanical_energy, planar_derivative, step_planar_rk4, PlanarState, RobotParams};
use wip_core::record::{first_divergence, replay, run_scripted};
use wip_core::synthesis::{
    dare_residual, lqr_gains, solve_dare, synthesize, CostWeights, DareOptions, GainSet, DEFAULT_SAMPLE_TIME,
};
use wip_core::world::{flags, RunSetup, SimConfig, World};
use wip_teleop::runlog::{read_log_file, write_log_file};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn setup(mapping: MappingConfig, course: CourseSpec) -> RunSetup {
    let params = RobotParams::default();
    RunSetup { gains: GainSet::synthesized(&params).unwrap(), params, mapping, course, sim: SimConfig::default() }
}

fn open_field() -> CourseSpec {
    CourseSpec {
        name: "field".into(),
        goal_line: 1000.0,
        cones: Vec::new(),
        bounds: Rect { x_min: -100.0, y_min: -100.0, x_max: 1001.0, y_max: 100.0 },
        countdown: 0.0,
        timeout: 600.0,
        ..CourseSpec::straight_line()
    }
}

fn linearization() -> Outcome {
    let start = Instant::now();
    let p = RobotParams::default();
    let exact = wip_core::synthesis::linearize(&p).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let f = |q: [f64; 4], u: f64| planar_derivative(&PlanarState::from_array(q), u, &p).unwrap().to_array();
    let mut worst: f64 = 0.0;
    for j in 0..4 {
        let (mut plus, mut minus) = ([0.0; 4], [0.0; 4]);
        plus[j] = h;
        minus[j] = -h;
        let (fp, fm) = (f(plus, 0.0), f(minus, 0.0));
        for i in 0..4 {
            worst = worst.max(((fp[i] - fm[i]) / (2.0 * h) - exact.a.0[i][j]).abs());
        }
    }
    let (fp, fm) = (f([0.0; 4], h), f([0.0; 4], -h));
    for i in 0..4 {
        worst = worst.max(((fp[i] - fm[i]) / (2.0 * h) - exact.b.0[i][0]).abs());
    }
    let took = start.elapsed();
    check(worst < 1e-6 && took < Duration::from_secs(1), format!("max entry error {worst:.2e}, {took:.2?}"))
}

fn dare() -> Outcome {
    let p = RobotParams::default();
    let w = CostWeights::default();
    let s = synthesize(&p, &w, DEFAULT_SAMPLE_TIME).map_err(|e| e.to_string())?;
    let r = Mat::<1, 1>([[w.r]]);
    let res = dare_residual(&s.model.a_d, &s.model.b_d, &w.q, &r, &s.riccati.p).map_err(|e| e.to_string())?;
    let one = Mat::<1, 1>([[1.0]]);
    let sol = solve_dare(&one, &one, &one, &one, DareOptions::default()).map_err(|e| e.to_string())?;
    let k = lqr_gains(&one, &one, &sol.p, &one).map_err(|e| e.to_string())?.0[0][0];
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let (ep, ek) = ((sol.p.0[0][0] - phi).abs(), (k - 1.0 / phi).abs());
    check(
        res < 1e-8 && ep < 1e-9 && ek < 1e-9 && (k - 0.6180).abs() < 1e-4,
        format!("residual {res:.2e}; scalar P error {ep:.1e}, K = {k:.6}"),
    )
}

fn stability() -> Outcome {
    let p = RobotParams::default();
    let s = synthesize(&p, &CostWeights::default(), DEFAULT_SAMPLE_TIME).map_err(|e| e.to_string())?;
    let rho = s.closed_loop_radius;
    let mut worst_settle: f64 = 0.0;
    for pitch0 in [0.1, -0.1] {
        let mut q = PlanarState::new(0.0, pitch0, 0.0, 0.0);
        let mut settled: Option<f64> = None;
        for i in 0..5000 {
            let u = stabilize(&DesiredState::default(), &q, &s.k);
            let (cmd, _) = compose_command(u, 0.0, 0.0, (0.0, 0.0), &p);
            q = step_planar_rk4(&q, cmd.axial_force(&p), &p, DEFAULT_SAMPLE_TIME).unwrap();
            if q.pitch.abs() < 0.01 {
                settled.get_or_insert((i + 1) as f64 * DEFAULT_SAMPLE_TIME);
            } else {
                settled = None;
            }
        }
        worst_settle = worst_settle.max(settled.unwrap_or(f64::INFINITY));
    }
    check(rho < 1.0 && worst_settle < 2.0, format!("spectral radius {rho:.6}, settles from 0.1 rad in {worst_settle:.3} s"))
}

fn energy() -> Outcome {
    let p = RobotParams::default();
    let mut worst: f64 = 0.0;
    for q0 in [
        PlanarState::new(0.0, 0.05, 0.0, 0.0),
        PlanarState::new(0.0, -0.3, 0.2, 0.0),
        PlanarState::new(0.0, 0.1, -0.5, 1.0),
        PlanarState::new(1.0, 0.0, 0.3, -0.4),
    ] {
        let e0 = mechanical_energy(&q0, &p);
        let mut q = q0;
        for _ in 0..1000 {
            q = step_planar_rk4(&q, 0.0, &p, 1e-3).unwrap();
            worst = worst.max(((mechanical_energy(&q, &p) - e0) / e0.abs()).abs());
        }
    }
    check(worst < 1e-6, format!("worst relative drift {worst:.2e} over 1 s"))
}

fn mapping_continuity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = MappingConfig::default();
    let mut curves = vec![d.vel, d.yaw, MappingConfig::sprint().vel];
    for _ in 0..500 {
        let db = rng.random_range(0.0..0.1);
        let swp = db + rng.random_range(0.001..0.2);
        curves.push(PiecewiseMapConfig {
            deadband: db,
            swp,
            max_in: swp + rng.random_range(0.001..0.5),
            alpha1: rng.random_range(0.0..20.0),
            alpha2: rng.random_range(0.0..20.0),
        });
    }
    let mut jump: f64 = 0.0;
    let mut odd = true;
    let mut bounded = true;
    for m in &curves {
        let f = |x: f64| piecewise_eval(x, m);
        jump = jump.max(f(m.deadband).abs());
        jump = jump.max((f(m.swp) - m.alpha1 * (m.swp - m.deadband)).abs());
        jump = jump.max((f(m.max_in) - (m.alpha2 * (m.max_in - m.swp) + m.c_swp())).abs());
        for x in [m.deadband, m.swp, m.max_in] {
            if x > 0.0 {
                jump = jump.max((f(x) - f(f64::from_bits(x.to_bits() - 1))).abs());
            }
        }
        for _ in 0..50 {
            let x = rng.random_range(-2.0..2.0);
            odd &= f(-x) == -f(x);
            bounded &= f(x).abs() <= m.max_out() + 1e-12;
        }
    }
    let mut tilt_capped = true;
    for _ in 0..1000 {
        let theta = rng.random_range(-1.0..1.0);
        tilt_capped &= tilt_from_pitch(theta, &d).abs() <= d.acc.theta_r_max;
    }
    let preset_ok = d.validate().is_ok()
        && d.acc.theta_r_max == AccelMapConfig::PREFERRED_MAX_TILT
        && (AccelMapConfig::PREFERRED_MAX_TILT - 0.0262).abs() < 1e-4;
    check(
        jump < 1e-12 && odd && bounded && tilt_capped && preset_ok,
        format!(
            "max breakpoint jump {jump:.1e}; odd {odd}; bounded {bounded}; tilt capped {tilt_capped}; 1.5 deg preset valid {preset_ok}"
        ),
    )
}

fn acceleration_relation() -> Outcome {
    let p = RobotParams::default();
    let mut exact = true;
    for tilt in [0.01, -0.02, AccelMapConfig::PREFERRED_MAX_TILT] {
        let mut acc = AccelIntegrator::new(20.0);
        for _ in 0..500 {
            exact &= acc.step(tilt, 1e-3, &p, 0.0).xddot == p.gravity * tilt;
        }
    }
    let (r, dt) = (0.01, 1e-3);
    let mut acc = AccelIntegrator::new(20.0);
    let mut xdot = 0.0;
    for i in 0..=1000 {
        xdot = acc.step(r * i as f64 * dt, dt, &p, 0.0).xdot;
    }
    let inertia = p.inertia();
    let analytic = 0.5 * p.gravity * r - inertia.rotational / inertia.coupling * r;
    let rel = (xdot - analytic).abs() / analytic;
    check(exact && rel < 0.02, format!("constant tilt exact {exact}; ramp xdot(1) {xdot:.5} vs {analytic:.5} ({:.2}%)", rel * 100.0))
}

fn non_minimum_phase() -> Outcome {
    let start = Instant::now();
    let s = setup(MappingConfig::default(), open_field());
    let rec = run_scripted(&s, &PilotProfile::step(&s.mapping), Some(3000)).map_err(|e| e.to_string())?;
    let early = &rec.frames[..500];
    let min_x = early.iter().map(|f| f.state.x_w).fold(f64::INFINITY, f64::min);
    let end_x = rec.frames.last().map_or(0.0, |f| f.state.x_w);
    let took = start.elapsed();
    check(
        min_x < 0.0 && end_x > 0.0 && took < Duration::from_secs(5),
        format!("min x_w {min_x:.4} m in first 0.5 s, x_w {end_x:.3} m at 3 s, {took:.2?}"),
    )
}

fn benchmark_bracketing() -> Outcome {
    let sprint = setup(MappingConfig::sprint(), CourseSpec::straight_line());
    let start = Instant::now();
    let pilot = PilotProfile::straight_line(&sprint.mapping, &sprint.params).map_err(|e| e.to_string())?;
    let a = run_scripted(&sprint, &pilot, None).map_err(|e| e.to_string())?;
    let wall_a = start.elapsed();
    let top = a.frames.iter().map(|f| f.desired.xdot).fold(0.0, f64::max);

    let weave = setup(MappingConfig::default(), CourseSpec::three_cone());
    let start = Instant::now();
    let pilot = PilotProfile::weave(&weave.mapping, &weave.params).map_err(|e| e.to_string())?;
    let b = run_scripted(&weave, &pilot, None).map_err(|e| e.to_string())?;
    let wall_b = start.elapsed();

    let ct = a.metrics.completion_time;
    let straight_ok = a.metrics.verdict == Some(Verdict::Success) && ct.is_some_and(|t| (3.5..=6.5).contains(&t));
    let path = b.metrics.path_length;
    let weave_ok = b.metrics.verdict == Some(Verdict::Success) && path.is_some_and(|l| (4.5..=5.5).contains(&l));
    let fast = wall_a < Duration::from_secs(60) && wall_b < Duration::from_secs(60);
    check(
        straight_ok && weave_ok && fast,
        format!(
            "straight {} in {} s (commanded top speed {top:.3} m/s, {wall_a:.2?}); weave {} path {} m ({wall_b:.2?})",
            label(a.metrics.verdict),
            num(ct),
            label(b.metrics.verdict),
            num(path)
        ),
    )
}

fn label(v: Option<Verdict>) -> &'static str {
    v.as_ref().map_or("unfinished", Verdict::label)
}

fn num(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.3}"))
}

fn odometry() -> Outcome {
    let mut world = World::new(setup(MappingConfig::default(), open_field())).map_err(|e| e.to_string())?;
    let mut seq = 0;
    let mut travelled = 0.0;
    let mut worst: f64 = 0.0;
    let (mut px, mut py) = (0.0, 0.0);
    for (secs, lean, twist) in [(6.0, 0.12, 0.0), (8.0, 0.12, 0.25), (4.0, 0.09, -0.4)] {
        for _ in 0..(secs * 1000.0) as usize {
            seq += 1;
            world.offer_input(PilotInput::new(lean, twist, world.time(), seq)).map_err(|e| e.to_string())?;
            let f = world.tick().map_err(|e| e.to_string())?.frame;
            travelled += (f.state.x - px).hypot(f.state.y - py);
            (px, py) = (f.state.x, f.state.y);
            worst = worst.max((f.odometry.x - f.state.x).hypot(f.odometry.y - f.state.y));
        }
    }
    let per_10m = worst / (travelled / 10.0);
    check(travelled >= 10.0 && per_10m < 1e-6, format!("{travelled:.2} m travelled, worst error {worst:.2e} m ({per_10m:.2e} per 10 m)"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut all = true;
    let weave = setup(MappingConfig::default(), CourseSpec::three_cone());
    let mut accel = setup(MappingConfig::default().with_mode(MappingMode::Acceleration), CourseSpec::three_cone());
    accel.sim.controller_divisor = 2;
    accel.sim.command_delay = 3;
    for (name, s) in [("weave", weave), ("acceleration", accel)] {
        let pilot = PilotProfile::weave(&s.mapping, &s.params).map_err(|e| e.to_string())?;
        let rec = run_scripted(&s, &pilot, None).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("{name}.wiplog"));
        write_log_file(&path, &rec).map_err(|e| e.to_string())?;
        let loaded = read_log_file(&path).map_err(|e| e.to_string())?;
        let again = replay(&loaded).map_err(|e| e.to_string())?;
        let same = first_divergence(&rec.frames, &loaded.frames).is_none()
            && first_divergence(&rec.frames, &again.frames).is_none()
            && again.metrics == rec.metrics
            && loaded.metrics == rec.metrics;
        all &= same;
        lines.push(format!("{name}: {} frames, identical {same}", rec.frames.len()));
    }
    check(all, lines.join("; "))
}

fn safety() -> Outcome {
    let mut notes = Vec::new();
    let mut all = true;
    for (mode, lean, secs) in [(MappingMode::Velocity, 0.1, 2.0), (MappingMode::Acceleration, 0.15, 3.0)] {
        let mut world =
            World::new(setup(MappingConfig::default().with_mode(mode), open_field())).map_err(|e| e.to_string())?;
        for seq in 1..=(secs * 1000.0) as u64 {
            world.offer_input(PilotInput::new(lean, 0.0, world.time(), seq)).map_err(|e| e.to_string())?;
            world.tick().map_err(|e| e.to_string())?;
        }
        let speed0 = world.desired().xdot;
        let mut onset = None;
        let mut zero_after = None;
        let mut max_pitch: f64 = 0.0;
        for i in 0..3000 {
            let f = world.tick().map_err(|e| e.to_string())?.frame;
            max_pitch = max_pitch.max(f.state.pitch.abs());
            if onset.is_none() && f.flags & flags::INPUT_STALE != 0 {
                onset = Some(i);
            }
            if let Some(o) = onset {
                if f.desired.xdot == 0.0 {
                    zero_after.get_or_insert(i - o);
                } else {
                    zero_after = None;
                }
            }
        }
        let onset_s = onset.map(|o| o as f64 * 1e-3);
        let zero_s = zero_after.map(|z| z as f64 * 1e-3);
        let ok = speed0 > 0.3
            && onset_s.is_some_and(|t| t <= 0.202)
            && zero_s.is_some_and(|t| t <= 1.0)
            && max_pitch < 0.3;
        all &= ok;
        notes.push(format!(
            "{mode:?}: from {speed0:.2} m/s, stale after {onset_s:?} s, zero after {zero_s:?} s, max |pitch| {max_pitch:.3}"
        ));
    }
    check(all, notes.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("linearization", linearization),
        ("dare", dare),
        ("stability", stability),
        ("energy", energy),
        ("mapping-continuity", mapping_continuity),
        ("acceleration-relation", acceleration_relation),
        ("non-minimum-phase", non_minimum_phase),
        ("benchmark-bracketing", benchmark_bracketing),
        ("odometry", odometry),
        ("determinism-replay", determinism),
        ("safety", safety),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
