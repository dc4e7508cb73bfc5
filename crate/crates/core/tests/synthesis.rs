//! Riccati synthesis and the closed balance loop.

use nalgebra::{Matrix1, Matrix4, Matrix4x1};
use wip_core::control::{compose_command, stabilize, DesiredState};
use wip_core::linalg::{Mat, Mat4};
use wip_core::model::{step_planar_rk4, PlanarState, RobotParams};
use wip_core::synthesis::{
    closed_loop, dare_residual, discretize, linearize, lqr_gains, solve_dare, synthesize, CostWeights, DareOptions,
    GainConvention, GainSet, HARDWARE_BALANCE_GAIN,
};

#[test]
fn scalar_dare_golden_ratio() {
    // a = b = q = r = 1: P^2 - P - 1 = 0, K = P / (1 + P) = 1/phi.
    let one = Mat::<1, 1>([[1.0]]);
    let sol = solve_dare(&one, &one, &one, &one, DareOptions::default()).unwrap();
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    assert!((sol.p.0[0][0] - phi).abs() < 1e-9, "{}", sol.p.0[0][0]);
    let k = lqr_gains(&one, &one, &sol.p, &one).unwrap().0[0][0];
    assert!((k - (phi - 1.0)).abs() < 1e-9, "{k}");
    assert!((k - 0.6180).abs() < 1e-4);
}

#[test]
fn default_dare_residual_is_tiny() {
    let p = RobotParams::default();
    let s = synthesize(&p, &CostWeights::default(), 1e-3).unwrap();
    let r = Mat::<1, 1>([[1.0]]);
    let res = dare_residual(&s.model.a_d, &s.model.b_d, &CostWeights::default().q, &r, &s.riccati.p).unwrap();
    assert!(res < 1e-8, "residual {res}");
    assert!(s.riccati.residual < 1e-8);
}

/// Structured doubling: an independent DARE solver.
fn sda(a: Matrix4<f64>, b: Matrix4x1<f64>, q: Matrix4<f64>, r: f64) -> Matrix4<f64> {
    let mut ak = a;
    let mut gk = b * Matrix1::new(1.0 / r) * b.transpose();
    let mut hk = q;
    let i = Matrix4::<f64>::identity();
    for _ in 0..60 {
        let w = (i + gk * hk).try_inverse().unwrap();
        let a_next = ak * w * ak;
        let g_next = gk + ak * w * gk * ak.transpose();
        let h_next = hk + ak.transpose() * hk * w * ak;
        let done = (h_next - hk).abs().max() < 1e-13 * h_next.abs().max();
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if done {
            break;
        }
    }
    hk
}

#[test]
fn riccati_solution_matches_doubling_oracle() {
    let p = RobotParams::default();
    let w = CostWeights::default();
    let s = synthesize(&p, &w, 1e-3).unwrap();
    let a = Matrix4::from_fn(|i, j| s.model.a_d.0[i][j]);
    let b = Matrix4x1::from_fn(|i, _| s.model.b_d.0[i][0]);
    let q = Matrix4::from_fn(|i, j| w.q.0[i][j]);
    let oracle = sda(a, b, q, w.r);
    let k_oracle = (b.transpose() * oracle * b + Matrix1::new(w.r)).try_inverse().unwrap() * b.transpose() * oracle * a;
    for i in 0..4 {
        let rel = (k_oracle[i] - s.k[i]).abs() / k_oracle[i].abs();
        assert!(rel < 1e-6, "K[{i}]: {} vs {}", s.k[i], k_oracle[i]);
    }
    let scale = oracle.abs().max();
    for i in 0..4 {
        for j in 0..4 {
            assert!((oracle[(i, j)] - s.riccati.p.0[i][j]).abs() < 1e-6 * scale);
        }
    }
}

#[test]
fn default_gain_values() {
    let k = GainSet::synthesized(&RobotParams::default()).unwrap().k;
    let expected = [-31.28, 214.12, -30.41, 28.94];
    for i in 0..4 {
        assert!((k[i] - expected[i]).abs() < 0.01, "{k:?}");
    }
}

#[test]
fn synthesized_gain_is_strictly_stable() {
    let p = RobotParams::default();
    let s = synthesize(&p, &CostWeights::default(), 1e-3).unwrap();
    assert!(s.closed_loop_radius < 1.0);
    let m = Matrix4::from_fn(|i, j| closed_loop(&s.model, &s.k).0[i][j]);
    let rho = m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!((rho - s.closed_loop_radius).abs() < 1e-9);
    assert!(rho < 1.0);
}

#[test]
fn gain_stabilizes_across_sample_periods() {
    let p = RobotParams::default();
    for ts in [1e-3, 1.2e-3, 2e-3, 5e-3] {
        let s = synthesize(&p, &CostWeights::default(), ts).unwrap();
        assert!(s.closed_loop_radius < 1.0, "ts {ts}");
    }
}

#[test]
fn hardware_vector_needs_the_pitch_adapter() {
    let p = RobotParams::default();
    let m = discretize(&linearize(&p).unwrap(), 1e-3).unwrap();
    let adapted = GainConvention::ForwardPitch.adapt(HARDWARE_BALANCE_GAIN, 1.0);
    assert!(GainSet::with_balance_gain(adapted).is_stabilizing(&m));
    assert!(!GainSet::with_balance_gain(HARDWARE_BALANCE_GAIN).is_stabilizing(&m));
    let negated = GainConvention::Negated.adapt(HARDWARE_BALANCE_GAIN, 1.0);
    assert!(!GainSet::with_balance_gain(negated).is_stabilizing(&m));
}

fn settle_time(k: [f64; 4], pitch0: f64) -> Option<f64> {
    let p = RobotParams::default();
    let mut q = PlanarState::new(0.0, pitch0, 0.0, 0.0);
    let mut settled_since: Option<f64> = None;
    for i in 0..5000 {
        let t = i as f64 * 1e-3;
        let u = stabilize(&DesiredState::default(), &q, &k);
        let (cmd, _) = compose_command(u, 0.0, 0.0, (0.0, 0.0), &p);
        q = step_planar_rk4(&q, cmd.axial_force(&p), &p, 1e-3).unwrap();
        if q.pitch.abs() < 0.01 {
            settled_since.get_or_insert(t + 1e-3);
        } else {
            settled_since = None;
        }
    }
    settled_since
}

#[test]
fn nonlinear_loop_recovers_from_tenth_radian() {
    let k = GainSet::synthesized(&RobotParams::default()).unwrap().k;
    let t = settle_time(k, 0.1).expect("never settled");
    assert!(t < 2.0, "settled at {t} s");
    let t = settle_time(k, -0.1).expect("never settled");
    assert!(t < 2.0, "settled at {t} s");
}

#[test]
fn weights_are_validated() {
    let p = RobotParams::default();
    let mut w = CostWeights::default();
    w.r = 0.0;
    assert!(synthesize(&p, &w, 1e-3).is_err());
    let mut w = CostWeights::default();
    w.q = Mat4::diag([1.0, -5.0, 1.0, 1.0]);
    assert!(synthesize(&p, &w, 1e-3).is_err());
    assert!(synthesize(&p, &CostWeights::default(), 0.0).is_err());
}
