//! Small fixed-size dense matrices and the numerical kernels built on them:
//! matrix exponential, characteristic polynomials and polynomial roots.
//!
//! Everything here is sized at compile time; the plant has four states and
//! one input, so nothing larger than 5x5 is ever formed.

use core::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

/// Row-major `R x C` matrix of `f64`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat<const R: usize, const C: usize>(pub [[f64; C]; R]);

pub type Mat4 = Mat<4, 4>;
pub type Vec4 = Mat<4, 1>;
pub type Row4 = Mat<1, 4>;

impl<const R: usize, const C: usize> Default for Mat<R, C> {
    fn default() -> Self {
        Self::zeros()
    }
}

impl<const R: usize, const C: usize> Mat<R, C> {
    pub const fn zeros() -> Self {
        Mat([[0.0; C]; R])
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros();
        for i in 0..R {
            for j in 0..C {
                m.0[i][j] = f(i, j);
            }
        }
        m
    }

    pub fn transpose(&self) -> Mat<C, R> {
        Mat::from_fn(|i, j| self.0[j][i])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(|i, j| self.0[i][j] * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(|i, j| f(self.0[i][j]))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Induced infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        self.0
            .iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flat_map(|r| r.iter()).all(|v| v.is_finite())
    }

    /// Copy a `SR x SC` block starting at `(r0, c0)`.
    pub fn block<const SR: usize, const SC: usize>(&self, r0: usize, c0: usize) -> Mat<SR, SC> {
        Mat::from_fn(|i, j| self.0[r0 + i][c0 + j])
    }

    pub fn set_block<const SR: usize, const SC: usize>(&mut self, r0: usize, c0: usize, b: &Mat<SR, SC>) {
        for i in 0..SR {
            for j in 0..SC {
                self.0[r0 + i][c0 + j] = b.0[i][j];
            }
        }
    }
}

impl<const N: usize> Mat<N, N> {
    pub fn identity() -> Self {
        Self::from_fn(|i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diag(d: [f64; N]) -> Self {
        Self::from_fn(|i, j| if i == j { d[i] } else { 0.0 })
    }

    pub fn trace(&self) -> f64 {
        (0..N).map(|i| self.0[i][i]).sum()
    }

    pub fn symmetrized(&self) -> Self {
        Self::from_fn(|i, j| 0.5 * (self.0[i][j] + self.0[j][i]))
    }

    /// Largest |a_ij - a_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..N {
            for j in 0..N {
                worst = worst.max((self.0[i][j] - self.0[j][i]).abs());
            }
        }
        worst
    }

    /// Gauss-Jordan inverse with partial pivoting. `None` when singular.
    pub fn inverse(&self) -> Option<Self> {
        let mut a = *self;
        let mut inv = Self::identity();
        for col in 0..N {
            let pivot = (col..N)
                .max_by(|&x, &y| a.0[x][col].abs().total_cmp(&a.0[y][col].abs()))?;
            if a.0[pivot][col] == 0.0 || !a.0[pivot][col].is_finite() {
                return None;
            }
            a.0.swap(col, pivot);
            inv.0.swap(col, pivot);
            let d = a.0[col][col];
            for j in 0..N {
                a.0[col][j] /= d;
                inv.0[col][j] /= d;
            }
            for row in 0..N {
                if row != col {
                    let f = a.0[row][col];
                    if f != 0.0 {
                        for j in 0..N {
                            a.0[row][j] -= f * a.0[col][j];
                            inv.0[row][j] -= f * inv.0[col][j];
                        }
                    }
                }
            }
        }
        Some(inv)
    }

    /// Matrix exponential by scaling and squaring of a truncated Taylor
    /// series. Terms are summed until the next term is below `rel_tol`
    /// relative to the partial sum.
    pub fn expm(&self, rel_tol: f64) -> Self {
        let norm = self.norm_inf();
        let mut squarings = 0u32;
        if norm > 0.5 {
            squarings = libm::ceil(libm::log2(norm / 0.5)) as u32;
        }
        let scaled = self.scale(libm::pow(2.0, -(squarings as f64)));
        let mut sum = Self::identity();
        let mut term = Self::identity();
        for k in 1..=60 {
            term = (term * scaled).scale(1.0 / k as f64);
            sum = sum + term;
            if term.max_abs() <= rel_tol * sum.max_abs() {
                break;
            }
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    /// Characteristic polynomial coefficients of `det(λI - A)`, highest
    /// degree first (`c[0] = 1`), by Faddeev-LeVerrier recursion.
    pub fn char_poly(&self) -> [f64; 8] {
        assert!(N < 8, "char_poly supports up to 7x7");
        let mut c = [0.0; 8];
        c[0] = 1.0;
        let mut m = Self::zeros();
        for k in 1..=N {
            let mut next = *self * m;
            for i in 0..N {
                next.0[i][i] += c[k - 1];
            }
            m = next;
            c[k] = -(*self * m).trace() / k as f64;
        }
        c
    }

    /// Eigenvalues as roots of the characteristic polynomial. The matrix is
    /// first shifted by its mean eigenvalue (trace / N) so clustered spectra
    /// (typical of fast-sampled discrete systems near 1) stay well conditioned.
    pub fn eigenvalues(&self) -> [Complex; N] {
        let shift = self.trace() / N as f64;
        let mut centered = *self;
        for i in 0..N {
            centered.0[i][i] -= shift;
        }
        let c = centered.char_poly();
        let mut roots = [Complex::ZERO; N];
        let found = poly_roots(&c[..=N], &mut roots[..]);
        debug_assert_eq!(found, N);
        for r in roots.iter_mut() {
            r.re += shift;
        }
        roots
    }

    /// Largest eigenvalue modulus.
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues().iter().map(|z| z.abs()).fold(0.0, f64::max)
    }
}

impl Mat<1, 1> {
    pub fn scalar(&self) -> f64 {
        self.0[0][0]
    }
}

impl<const R: usize> Mat<R, 1> {
    pub fn from_col(v: [f64; R]) -> Self {
        Self::from_fn(|i, _| v[i])
    }

    pub fn col(&self) -> [f64; R] {
        let mut out = [0.0; R];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.0[i][0];
        }
        out
    }
}

impl<const C: usize> Mat<1, C> {
    pub fn from_row(v: [f64; C]) -> Self {
        Mat([v])
    }

    pub fn row(&self) -> [f64; C] {
        self.0[0]
    }
}

impl<const R: usize, const C: usize> Index<(usize, usize)> for Mat<R, C> {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl<const R: usize, const C: usize> IndexMut<(usize, usize)> for Mat<R, C> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

impl<const R: usize, const K: usize, const C: usize> Mul<Mat<K, C>> for Mat<R, K> {
    type Output = Mat<R, C>;
    fn mul(self, rhs: Mat<K, C>) -> Mat<R, C> {
        Mat::from_fn(|i, j| (0..K).map(|k| self.0[i][k] * rhs.0[k][j]).sum())
    }
}

impl<const R: usize, const C: usize> Add for Mat<R, C> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] + rhs.0[i][j])
    }
}

impl<const R: usize, const C: usize> Sub for Mat<R, C> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::from_fn(|i, j| self.0[i][j] - rhs.0[i][j])
    }
}

impl<const R: usize, const C: usize> Neg for Mat<R, C> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

/// Minimal complex number for polynomial root finding.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };
    pub const ONE: Complex = Complex { re: 1.0, im: 0.0 };

    pub const fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    pub fn abs(self) -> f64 {
        libm::hypot(self.re, self.im)
    }

    pub fn inv(self) -> Self {
        let d = self.re * self.re + self.im * self.im;
        Complex::new(self.re / d, -self.im / d)
    }
}

impl Add for Complex {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Complex::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for Complex {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Complex::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for Complex {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Complex::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

impl Mul<f64> for Complex {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Complex::new(self.re * s, self.im * s)
    }
}

fn horner(coeffs: &[f64], z: Complex) -> (Complex, Complex) {
    // value and first derivative
    let mut p = Complex::new(coeffs[0], 0.0);
    let mut dp = Complex::ZERO;
    for &c in &coeffs[1..] {
        dp = dp * z + p;
        p = p * z + Complex::new(c, 0.0);
    }
    (p, dp)
}

/// Roots of the real polynomial `coeffs[0] z^n + ... + coeffs[n]` by the
/// Aberth-Ehrlich simultaneous iteration followed by Newton polishing.
/// Writes `n` roots into `out` and returns `n`.
pub fn poly_roots(coeffs: &[f64], out: &mut [Complex]) -> usize {
    let mut lead = 0;
    while lead < coeffs.len() && coeffs[lead] == 0.0 {
        lead += 1;
    }
    let c = &coeffs[lead..];
    if c.len() < 2 {
        return 0;
    }
    let n = c.len() - 1;
    assert!(out.len() >= n);
    let a0 = c[0];
    // Cauchy bound on root moduli.
    let bound = 1.0 + c[1..].iter().map(|v| (v / a0).abs()).fold(0.0, f64::max);
    // Geometric mean of the root moduli gives a better starting radius.
    let radius = {
        let prod = (c[n] / a0).abs();
        if prod > 0.0 {
            libm::pow(prod, 1.0 / n as f64).min(bound)
        } else {
            0.5 * bound
        }
    };
    let roots = &mut out[..n];
    for (k, r) in roots.iter_mut().enumerate() {
        let ang = 2.0 * core::f64::consts::PI * k as f64 / n as f64 + 0.4;
        *r = Complex::new(radius * libm::cos(ang), radius * libm::sin(ang));
    }
    for _ in 0..500 {
        let mut max_step = 0.0f64;
        for i in 0..n {
            let (p, dp) = horner(c, roots[i]);
            if p.abs() == 0.0 {
                continue;
            }
            let ratio = if dp.abs() > 0.0 { p * dp.inv() } else { p };
            let mut repulsion = Complex::ZERO;
            for j in 0..n {
                if j != i {
                    let d = roots[i] - roots[j];
                    if d.abs() > 0.0 {
                        repulsion = repulsion + d.inv();
                    }
                }
            }
            let denom = Complex::ONE - ratio * repulsion;
            let step = if denom.abs() > 0.0 { ratio * denom.inv() } else { ratio };
            roots[i] = roots[i] - step;
            max_step = max_step.max(step.abs() / (1.0 + roots[i].abs()));
        }
        if max_step < 1e-16 {
            break;
        }
    }
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = horner(c, *r);
            if dp.abs() == 0.0 || p.abs() == 0.0 {
                break;
            }
            let step = p * dp.inv();
            let candidate = *r - step;
            if horner(c, candidate).0.abs() < p.abs() {
                *r = candidate;
            } else {
                break;
            }
        }
    }
    n
}
