use proptest::prelude::*;
use wip_core::control::{compose_command, merge_wheel_torques, split_wheel_torques};
use wip_core::course::path_length;
use wip_core::mapping::{
    piecewise_eval, tilt_from_pitch, AccelIntegrator, AccelMapConfig, MappingConfig, PiecewiseMapConfig,
    TILT_SAFETY_CAP,
};
use wip_core::model::RobotParams;

fn arb_curve() -> impl Strategy<Value = PiecewiseMapConfig> {
    (0.0..0.1f64, 0.001..0.2f64, 0.001..0.5f64, 0.0..20.0f64, 0.0..20.0f64).prop_map(|(db, a, b, alpha1, alpha2)| {
        PiecewiseMapConfig { deadband: db, swp: db + a, max_in: db + a + b, alpha1, alpha2 }
    })
}

proptest! {
    #[test]
    fn curve_is_continuous_at_breakpoints(m in arb_curve()) {
        m.validate().unwrap();
        let f = |x: f64| piecewise_eval(x, &m);
        let below = |x: f64| f64::from_bits(x.to_bits() - 1);
        // value at each breakpoint against the closed form of the section below it
        prop_assert!(f(m.deadband).abs() <= 1e-12);
        prop_assert!((f(m.swp) - m.alpha1 * (m.swp - m.deadband)).abs() <= 1e-12);
        prop_assert!((f(m.max_in) - (m.alpha2 * (m.max_in - m.swp) + m.c_swp())).abs() <= 1e-12);
        // and against the neighbouring float just below
        for x in [m.deadband, m.swp, m.max_in] {
            if x > 0.0 {
                prop_assert!((f(x) - f(below(x))).abs() <= 1e-12, "jump at {}", x);
            }
        }
        // each section's closed form agrees at its ends
        prop_assert!((m.alpha1 * (m.swp - m.deadband) - m.c_swp()).abs() <= 1e-12);
        prop_assert!((m.alpha2 * (m.max_in - m.swp) + m.c_swp() - m.max_out()).abs() <= 1e-12);
    }

    #[test]
    fn curve_is_odd_and_bounded(m in arb_curve(), x in -2.0..2.0f64) {
        let y = piecewise_eval(x, &m);
        prop_assert_eq!(piecewise_eval(-x, &m), -y);
        prop_assert!(y.abs() <= m.max_out() + 1e-12);
        if x.abs() < m.deadband {
            prop_assert_eq!(y, 0.0);
        }
    }

    #[test]
    fn curve_is_monotone(m in arb_curve(), a in -1.0..1.0f64, b in -1.0..1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(piecewise_eval(lo, &m) <= piecewise_eval(hi, &m) + 1e-12);
    }

    #[test]
    fn tilt_map_respects_cap(theta in -1.0..1.0f64, cap in 0.001..TILT_SAFETY_CAP, slope in 0.0..2.0f64) {
        let mut c = MappingConfig::default();
        c.acc = AccelMapConfig { deadband: 0.01, slope, theta_r_max: cap };
        c.validate().unwrap();
        let t = tilt_from_pitch(theta, &c);
        prop_assert!(t.abs() <= cap);
        prop_assert_eq!(tilt_from_pitch(-theta, &c), -t);
    }

    #[test]
    fn wheel_torques_never_exceed_limit(
        u in -1e4..1e4f64,
        yaw in -100.0..100.0f64,
        hip in -100.0..100.0f64,
        wl in -40.0..40.0f64,
        wr in -40.0..40.0f64,
    ) {
        let p = RobotParams::default();
        let (c, _) = compose_command(u, yaw, hip, (wl, wr), &p);
        for tau in [c.tau_left, c.tau_right, c.tau_hip] {
            prop_assert!(tau.abs() <= p.tau_max);
        }
    }

    #[test]
    fn torque_split_inverts(u in -500.0..500.0f64, yaw in -20.0..20.0f64) {
        let p = RobotParams::default();
        let (l, r) = split_wheel_torques(u, yaw, &p);
        let (u2, yaw2) = merge_wheel_torques(l, r, &p);
        prop_assert!((u2 - u).abs() <= 1e-9 * u.abs().max(1.0));
        prop_assert!((yaw2 - yaw).abs() <= 1e-12 * yaw.abs().max(1.0));
    }

    #[test]
    fn path_is_at_least_displacement(pts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 2..40)) {
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        let (a, b) = (pts[0], pts[pts.len() - 1]);
        let d = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        prop_assert!(path_length(&pts) >= d - 1e-12);
    }
}

#[test]
fn preferred_tilt_preset_is_valid() {
    let c = MappingConfig::default();
    assert_eq!(c.acc.theta_r_max, AccelMapConfig::PREFERRED_MAX_TILT);
    assert!((AccelMapConfig::PREFERRED_MAX_TILT - 0.0262).abs() < 1e-4);
    c.validate().unwrap();
    // full pilot pitch reaches the cap and no further
    assert_eq!(tilt_from_pitch(c.theta_h_max, &c), c.acc.theta_r_max);
    assert_eq!(tilt_from_pitch(1.0, &c), c.acc.theta_r_max);
}

#[test]
fn constant_tilt_gives_gravity_acceleration() {
    let p = RobotParams::default();
    for tilt in [0.0, 0.01, -0.02, AccelMapConfig::PREFERRED_MAX_TILT] {
        let mut acc = AccelIntegrator::new(20.0);
        for _ in 0..500 {
            let out = acc.step(tilt, 1e-3, &p, 0.0);
            assert_eq!(out.xddot, p.gravity * tilt);
            assert_eq!(out.tilt_accel, 0.0);
        }
    }
}

#[test]
fn tilt_ramp_integrates_to_pendulum_speed() {
    // theta(t) = r t from rest. The rate jumps from 0 to r at the start, so
    // xdot(T) = g r T^2 / 2 - (D / c) r.
    let p = RobotParams::default();
    let (r, dt, n) = (0.01, 1e-3, 1000);
    let mut acc = AccelIntegrator::new(20.0);
    let mut xdot = 0.0;
    for i in 0..=n {
        xdot = acc.step(r * (i as f64) * dt, dt, &p, 0.0).xdot;
    }
    let inertia = p.inertia();
    let t = n as f64 * dt;
    let exact = 0.5 * p.gravity * r * t * t - inertia.rotational / inertia.coupling * r;
    assert!((xdot - exact).abs() < 0.02 * exact.abs(), "xdot {xdot} vs {exact}");
    // gravity term alone is the first-order estimate
    let gravity_only = 0.5 * p.gravity * r * t * t;
    assert!((gravity_only - 0.049).abs() < 1e-3);
}

#[test]
fn speed_clamp_stops_position_windup() {
    let p = RobotParams::default();
    let mut acc = AccelIntegrator::new(20.0);
    let dt = 1e-3;
    let mut achieved = 0.0;
    let mut clamped_steps = 0;
    for _ in 0..3000 {
        // achieved wheel position lags well behind
        achieved += 0.5 * dt;
        let out = acc.step(0.2, dt, &p, achieved);
        assert!(out.xdot.abs() <= p.v_max_hw);
        if out.clamped {
            clamped_steps += 1;
            assert_eq!(out.x, achieved);
        }
    }
    assert!(clamped_steps > 1000);
    // releasing the tilt starts slowing from the cap, not from a wound-up value
    let out = acc.step(0.0, dt, &p, achieved);
    assert!(out.xdot <= p.v_max_hw);
    assert!((out.x - achieved).abs() < p.v_max_hw * dt * 2.0);
}
