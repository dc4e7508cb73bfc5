//! Linearization, zero-order-hold discretization and infinite-horizon LQR
//! synthesis for the planar pendulum.

use crate::error::{Error, Result};
use crate::linalg::{Complex, Mat, Mat4, Row4, Vec4};
use crate::model::{planar_derivative, PlanarState, RobotParams};

/// Sampling period the balance controller is designed for, s.
pub const DEFAULT_SAMPLE_TIME: f64 = 1.0e-3;

/// Relative truncation tolerance for the matrix exponential series.
pub const EXPM_TOL: f64 = 1e-12;

/// Continuous-time linearization about upright rest (`q0 = 0`, `u0 = 0`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuousModel {
    pub a: Mat4,
    pub b: Vec4,
}

/// Continuous model together with its exact ZOH discretization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearModel {
    pub a: Mat4,
    pub b: Vec4,
    pub a_d: Mat4,
    pub b_d: Vec4,
    pub ts: f64,
}

/// Closed-form linearization of the planar dynamics around upright.
pub fn linearize(p: &RobotParams) -> Result<ContinuousModel> {
    let inertia = p.inertia();
    let det = inertia.determinant();
    if !det.is_finite() || det <= 0.0 {
        return Err(Error::InvalidParams("planar mass matrix is singular"));
    }
    let (m, d, c) = (inertia.translational, inertia.rotational, inertia.coupling);
    let gravity_moment = c * p.gravity;
    let mut a = Mat4::zeros();
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    a[(2, 1)] = c * gravity_moment / det;
    a[(3, 1)] = m * gravity_moment / det;
    let b = Vec4::from_col([0.0, 0.0, d / det, c / det]);
    Ok(ContinuousModel { a, b })
}

/// Jacobians of the nonlinear planar dynamics at `(q0, u0)` by central
/// differences with step `h`.
pub fn finite_difference_jacobians(
    p: &RobotParams,
    q0: &PlanarState,
    u0: f64,
    h: f64,
) -> Result<ContinuousModel> {
    let base = q0.to_array();
    let mut a = Mat4::zeros();
    for j in 0..4 {
        let mut plus = base;
        let mut minus = base;
        plus[j] += h;
        minus[j] -= h;
        let fp = planar_derivative(&PlanarState::from_array(plus), u0, p)?.to_array();
        let fm = planar_derivative(&PlanarState::from_array(minus), u0, p)?.to_array();
        for i in 0..4 {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    let fp = planar_derivative(q0, u0 + h, p)?.to_array();
    let fm = planar_derivative(q0, u0 - h, p)?.to_array();
    let b = Vec4::from_fn(|i, _| (fp[i] - fm[i]) / (2.0 * h));
    Ok(ContinuousModel { a, b })
}

/// Zero-order-hold discretization via the exponential of the augmented
/// matrix `[[A, B], [0, 0]] * ts`. `N + K` must not exceed 8.
pub fn zoh<const N: usize, const K: usize>(
    a: &Mat<N, N>,
    b: &Mat<N, K>,
    ts: f64,
) -> Result<(Mat<N, N>, Mat<N, K>)> {
    assert!(N + K <= 8, "augmented system larger than 8x8");
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::InvalidConfig("sampling period must be positive"));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("state-space matrices"));
    }
    // Zero padding beyond N+K leaves those dimensions as identity in the
    // exponential without coupling into the blocks we read back.
    let mut aug = Mat::<8, 8>::zeros();
    aug.set_block(0, 0, &a.scale(ts));
    aug.set_block(0, N, &b.scale(ts));
    let e = aug.expm(EXPM_TOL);
    Ok((e.block(0, 0), e.block(0, N)))
}

pub fn discretize(m: &ContinuousModel, ts: f64) -> Result<LinearModel> {
    let (a_d, b_d) = zoh(&m.a, &m.b, ts)?;
    Ok(LinearModel { a: m.a, b: m.b, a_d, b_d, ts })
}

/// Options for the Riccati fixed-point iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DareOptions {
    /// Stop once the largest entry change of P is at most this times
    /// `max(1, max |P|)`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        DareOptions { tolerance: 1e-15, max_iterations: 1_000_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DareSolution<const N: usize> {
    pub p: Mat<N, N>,
    pub iterations: usize,
    pub residual: f64,
}

fn riccati_map<const N: usize, const K: usize>(
    a: &Mat<N, N>,
    b: &Mat<N, K>,
    q: &Mat<N, N>,
    r: &Mat<K, K>,
    p: &Mat<N, N>,
) -> Result<Mat<N, N>> {
    let at = a.transpose();
    let bt = b.transpose();
    let pa = *p * *a;
    let pb = *p * *b;
    let s = *r + bt * pb;
    let s_inv = s.inverse().ok_or(Error::Singular("R + B'PB"))?;
    let gain = s_inv * (bt * pa);
    Ok((*q + at * pa - (at * pb) * gain).symmetrized())
}

/// Largest absolute entry of `Q + A'PA - A'PB (R + B'PB)^-1 B'PA - P`.
pub fn dare_residual<const N: usize, const K: usize>(
    a: &Mat<N, N>,
    b: &Mat<N, K>,
    q: &Mat<N, N>,
    r: &Mat<K, K>,
    p: &Mat<N, N>,
) -> Result<f64> {
    Ok((riccati_map(a, b, q, r, p)? - *p).max_abs())
}

fn check_symmetric<const N: usize>(m: &Mat<N, N>, what: &'static str) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::NonFinite(what));
    }
    if m.asymmetry() > 1e-12 * m.max_abs().max(1.0) {
        return Err(Error::InvalidWeights(what));
    }
    Ok(())
}

/// LDL' pivots of a symmetric matrix; semidefinite iff all are >= -tol.
fn min_ldl_pivot<const N: usize>(m: &Mat<N, N>) -> f64 {
    let mut a = *m;
    let mut min = f64::INFINITY;
    for k in 0..N {
        let pivot = a[(k, k)];
        min = min.min(pivot);
        if pivot.abs() <= 1e-300 {
            continue;
        }
        for i in k + 1..N {
            let f = a[(i, k)] / pivot;
            for j in k..N {
                a[(i, j)] -= f * a[(k, j)];
            }
        }
    }
    min
}

/// Solve the discrete algebraic Riccati equation by iterating the Riccati
/// map from `P = Q` until the largest entry change, relative to the largest
/// entry of `P`, drops to tolerance.
pub fn solve_dare<const N: usize, const K: usize>(
    a: &Mat<N, N>,
    b: &Mat<N, K>,
    q: &Mat<N, N>,
    r: &Mat<K, K>,
    opts: DareOptions,
) -> Result<DareSolution<N>> {
    check_symmetric(q, "Q must be symmetric")?;
    check_symmetric(r, "R must be symmetric")?;
    if min_ldl_pivot(q) < -1e-12 * q.max_abs().max(1.0) {
        return Err(Error::InvalidWeights("Q must be positive semidefinite"));
    }
    if min_ldl_pivot(r) <= 0.0 {
        return Err(Error::InvalidWeights("R must be positive definite"));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("state-space matrices"));
    }
    let mut p = *q;
    let mut change = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        let next = riccati_map(a, b, q, r, &p)?;
        if !next.is_finite() {
            return Err(Error::NotConverged { iterations: it, last_change: f64::INFINITY });
        }
        change = (next - p).max_abs();
        p = next;
        if change <= opts.tolerance * p.max_abs().max(1.0) {
            let residual = dare_residual(a, b, q, r, &p)?;
            return Ok(DareSolution { p, iterations: it, residual });
        }
    }
    Err(Error::NotConverged { iterations: opts.max_iterations, last_change: change })
}

/// `K = (R + B'PB)^-1 B'PA`.
pub fn lqr_gains<const N: usize, const K: usize>(
    a: &Mat<N, N>,
    b: &Mat<N, K>,
    p: &Mat<N, N>,
    r: &Mat<K, K>,
) -> Result<Mat<K, N>> {
    let bt = b.transpose();
    let s = *r + bt * *p * *b;
    let s_inv = s.inverse().ok_or(Error::Singular("R + B'PB"))?;
    Ok(s_inv * bt * *p * *a)
}

/// Largest eigenvalue modulus of a 4x4 matrix.
pub fn spectral_radius(m: &Mat4) -> f64 {
    m.spectral_radius()
}

pub fn eigenvalues(m: &Mat4) -> [Complex; 4] {
    m.eigenvalues()
}

/// Closed-loop discrete matrix `A_d - B_d K`.
pub fn closed_loop(model: &LinearModel, k: &[f64; 4]) -> Mat4 {
    model.a_d - model.b_d * Row4::from_row(*k)
}

/// Quadratic cost weights for the balance LQR.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostWeights {
    pub q: Mat4,
    pub r: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { q: Mat4::diag([1000.0, 2000.0, 10.0, 1.0]), r: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Synthesis {
    pub model: LinearModel,
    pub riccati: DareSolution<4>,
    pub k: [f64; 4],
    pub closed_loop_radius: f64,
}

/// Full pipeline: linearize, discretize at `ts`, solve the DARE and form K.
/// Fails unless the resulting closed loop is strictly stable.
pub fn synthesize(p: &RobotParams, weights: &CostWeights, ts: f64) -> Result<Synthesis> {
    p.validate()?;
    let model = discretize(&linearize(p)?, ts)?;
    let r = Mat::<1, 1>([[weights.r]]);
    let riccati = solve_dare(&model.a_d, &model.b_d, &weights.q, &r, DareOptions::default())?;
    let k = lqr_gains(&model.a_d, &model.b_d, &riccati.p, &r)?.row();
    let closed_loop_radius = spectral_radius(&closed_loop(&model, &k));
    if !(closed_loop_radius < 1.0) {
        return Err(Error::InvalidConfig("synthesized gain is not stabilizing"));
    }
    Ok(Synthesis { model, riccati, k, closed_loop_radius })
}

/// How a stored balance gain vector maps onto this crate's convention
/// `u = -K (q - q_des)` with the plant's pitch sign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GainConvention {
    /// Already in plant convention.
    #[default]
    Native,
    /// Gains written for forward-positive pitch: pitch and pitch-rate
    /// entries are negated.
    ForwardPitch,
    /// Gains written for `u = +K dq`: every entry is negated.
    Negated,
}

impl GainConvention {
    pub fn adapt(self, k: [f64; 4], scale: f64) -> [f64; 4] {
        let sign = match self {
            GainConvention::Native => [1.0, 1.0, 1.0, 1.0],
            GainConvention::ForwardPitch => [1.0, -1.0, 1.0, -1.0],
            GainConvention::Negated => [-1.0, -1.0, -1.0, -1.0],
        };
        [k[0] * sign[0] * scale, k[1] * sign[1] * scale, k[2] * sign[2] * scale, k[3] * sign[3] * scale]
    }
}

/// Hand-tuned balance gain reported for the hardware robot, in its own
/// forward-positive pitch convention.
pub const HARDWARE_BALANCE_GAIN: [f64; 4] = [-180.0, -640.0, -120.0, -70.0];

/// Controller gains: balance state feedback plus the hip and yaw PD pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GainSet {
    /// Balance gain in plant convention.
    pub k: [f64; 4],
    pub hip_kp: f64,
    pub hip_kd: f64,
    pub yaw_kp: f64,
    pub yaw_kd: f64,
}

impl GainSet {
    /// PD gains tuned on hardware for the hip and heading loops.
    pub const HIP_KP: f64 = 100.0;
    pub const HIP_KD: f64 = 1.0;
    pub const YAW_KP: f64 = 1.0;
    pub const YAW_KD: f64 = 0.1;

    pub fn with_balance_gain(k: [f64; 4]) -> Self {
        GainSet { k, hip_kp: Self::HIP_KP, hip_kd: Self::HIP_KD, yaw_kp: Self::YAW_KP, yaw_kd: Self::YAW_KD }
    }

    /// Synthesize the balance gain from default weights.
    pub fn synthesized(p: &RobotParams) -> Result<Self> {
        let s = synthesize(p, &CostWeights::default(), DEFAULT_SAMPLE_TIME)?;
        Ok(Self::with_balance_gain(s.k))
    }

    /// The hardware gain preset, passed through the forward-pitch adapter.
    pub fn hardware_preset() -> Self {
        Self::with_balance_gain(GainConvention::ForwardPitch.adapt(HARDWARE_BALANCE_GAIN, 1.0))
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.k[0], self.k[1], self.k[2], self.k[3], self.hip_kp, self.hip_kd, self.yaw_kp, self.yaw_kd];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gain set"));
        }
        if [self.hip_kp, self.hip_kd, self.yaw_kp, self.yaw_kd].iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidConfig("PD gains must be non-negative"));
        }
        Ok(())
    }

    /// Spectral radius of the discrete closed loop this gain forms with `model`.
    pub fn closed_loop_radius(&self, model: &LinearModel) -> f64 {
        spectral_radius(&closed_loop(model, &self.k))
    }

    pub fn is_stabilizing(&self, model: &LinearModel) -> bool {
        self.closed_loop_radius(model) < 1.0
    }
}
