//! Dense complex linear algebra on small Hilbert spaces and time-ordered
//! propagation.
//!
//! Qubit conventions follow the sensor literature rather than the usual
//! physics textbook ordering: basis index 0 is `|0>`, index 1 is `|1>`, and
//! `sigma_z = |1><1| - |0><0|`, `sigma_y = -i|1><0| + i|0><1|`. The Pauli
//! algebra (`sigma_x sigma_y = i sigma_z` and cyclic) is unchanged, so every
//! rotation identity holds as usual.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

/// Largest Hilbert-space dimension the engine accepts (qubit + 3 nuclei).
pub const MAX_DIM: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("operator is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("dimension {0} is not a power of two in 2..={MAX_DIM}")]
    BadDimension(usize),
    #[error("dt_max must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("segment durations must be positive, got {0}")]
    BadDuration(f64),
}

/// A square complex matrix of power-of-two dimension, stored row-major.
#[derive(Clone, PartialEq)]
pub struct Operator {
    dim: usize,
    data: Vec<C64>,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Operator({}x{}) [", self.dim, self.dim)?;
        for r in 0..self.dim {
            write!(f, "  ")?;
            for c in 0..self.dim {
                let z = self.get(r, c);
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        Operator {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    /// Builds an operator from row-major entries. Panics if `entries.len()`
    /// is not a perfect square.
    pub fn from_row_major(entries: Vec<C64>) -> Self {
        let dim = (entries.len() as f64).sqrt().round() as usize;
        assert_eq!(dim * dim, entries.len(), "entries must form a square matrix");
        Operator { dim, data: entries }
    }

    pub fn from_rows<const N: usize>(rows: [[C64; N]; N]) -> Self {
        Operator {
            dim: N,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn diagonal(entries: &[C64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &z) in entries.iter().enumerate() {
            m.data[i * entries.len() + i] = z;
        }
        m
    }

    /// Outer product `|a><b|`.
    pub fn outer(a: &StateVector, b: &StateVector) -> Self {
        assert_eq!(a.dim(), b.dim());
        let dim = a.dim();
        let mut m = Self::zeros(dim);
        for r in 0..dim {
            for c in 0..dim {
                m.data[r * dim + c] = a.amps[r] * b.amps[c].conj();
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, z: C64) {
        self.data[r * self.dim + c] = z;
    }

    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    pub fn entries_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut m = Self::zeros(n);
        for r in 0..n {
            for c in 0..n {
                m.data[c * n + r] = self.data[r * n + c].conj();
            }
        }
        m
    }

    pub fn scale(&self, s: C64) -> Self {
        Operator {
            dim: self.dim,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Operator {
            dim: self.dim,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &Operator, s: C64) {
        assert_eq!(self.dim, other.dim);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|z| *z = ZERO);
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// Largest entry-wise modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let n = self.dim;
        let mut dev: f64 = 0.0;
        for r in 0..n {
            for c in r..n {
                let d = (self.data[r * n + c] - self.data[c * n + r].conj()).norm();
                dev = dev.max(d);
            }
        }
        dev
    }

    /// `M = M^dagger` within `rel_tol` relative to the largest entry.
    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.hermiticity_deviation() <= rel_tol * self.max_abs().max(1.0)
    }

    /// `max |(U^dagger U - I)_ij|`
    pub fn unitarity_error(&self) -> f64 {
        (&self.adjoint() * self).max_abs_diff(&Operator::identity(self.dim))
    }

    /// Kronecker product `self (x) other`.
    pub fn kron(&self, other: &Operator) -> Operator {
        tensor(self, other)
    }

    pub fn matmul_into(&self, rhs: &Operator, out: &mut Operator) {
        let n = self.dim;
        assert_eq!(n, rhs.dim);
        assert_eq!(n, out.dim);
        for r in 0..n {
            for c in 0..n {
                let mut acc = ZERO;
                for k in 0..n {
                    acc += self.data[r * n + k] * rhs.data[k * n + c];
                }
                out.data[r * n + c] = acc;
            }
        }
    }

    pub fn apply(&self, psi: &StateVector) -> StateVector {
        assert_eq!(self.dim, psi.dim());
        let n = self.dim;
        let amps = (0..n)
            .map(|r| (0..n).map(|c| self.data[r * n + c] * psi.amps[c]).sum())
            .collect();
        StateVector { amps }
    }

    /// `<a| self |b>`
    pub fn matrix_element(&self, a: &StateVector, b: &StateVector) -> C64 {
        a.inner(&self.apply(b))
    }

}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn mul(self, rhs: &'a Operator) -> Operator {
        let mut out = Operator::zeros(self.dim);
        self.matmul_into(rhs, &mut out);
        out
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn add(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim);
        Operator {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn sub(self, rhs: &'a Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim);
        Operator {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Kronecker product, `dim = dim_a * dim_b`.
pub fn tensor(a: &Operator, b: &Operator) -> Operator {
    let (na, nb) = (a.dim, b.dim);
    let n = na * nb;
    let mut m = Operator::zeros(n);
    for ar in 0..na {
        for ac in 0..na {
            let x = a.data[ar * na + ac];
            if x == ZERO {
                continue;
            }
            for br in 0..nb {
                for bc in 0..nb {
                    m.data[(ar * nb + br) * n + ac * nb + bc] = x * b.data[br * nb + bc];
                }
            }
        }
    }
    m
}

/// Single-qubit operators in the sensor basis (index 0 = `|0>`).
pub mod pauli {
    use super::{Operator, C64, I, ONE, ZERO};

    pub fn identity() -> Operator {
        Operator::identity(2)
    }

    pub fn sigma_x() -> Operator {
        Operator::from_rows([[ZERO, ONE], [ONE, ZERO]])
    }

    /// `-i|1><0| + i|0><1|`
    pub fn sigma_y() -> Operator {
        Operator::from_rows([[ZERO, I], [-I, ZERO]])
    }

    /// `|1><1| - |0><0|`
    pub fn sigma_z() -> Operator {
        Operator::from_rows([[-ONE, ZERO], [ZERO, ONE]])
    }

    /// `(sigma_x + i sigma_y)/2 = |1><0|`
    pub fn sigma_plus() -> Operator {
        Operator::from_rows([[ZERO, ZERO], [ONE, ZERO]])
    }

    pub fn sigma_minus() -> Operator {
        Operator::from_rows([[ZERO, ONE], [ZERO, ZERO]])
    }

    /// Transverse Pauli along azimuth `phi`: `sigma_x cos(phi) + sigma_y sin(phi)`.
    pub fn sigma_phi(phi: f64) -> Operator {
        let e = C64::from_polar(1.0, phi);
        Operator::from_rows([[ZERO, e], [e.conj(), ZERO]])
    }

    /// `n_x sigma_x + n_y sigma_y + n_z sigma_z`
    pub fn sigma_dot(n: [f64; 3]) -> Operator {
        let off = C64::new(n[0], n[1]);
        Operator::from_rows([
            [C64::new(-n[2], 0.0), off],
            [off.conj(), C64::new(n[2], 0.0)],
        ])
    }

    /// Spin-1/2 operators `I = sigma/2` in the textbook (up, down) basis, used
    /// for nuclear spins.
    pub mod spin_half {
        use super::super::{Operator, I, ONE, ZERO};

        pub fn ix() -> Operator {
            Operator::from_rows([[ZERO, ONE * 0.5], [ONE * 0.5, ZERO]])
        }
        pub fn iy() -> Operator {
            Operator::from_rows([[ZERO, -I * 0.5], [I * 0.5, ZERO]])
        }
        pub fn iz() -> Operator {
            Operator::from_rows([[ONE * 0.5, ZERO], [ZERO, -ONE * 0.5]])
        }
        pub fn i_plus() -> Operator {
            Operator::from_rows([[ZERO, ONE], [ZERO, ZERO]])
        }
        pub fn i_minus() -> Operator {
            Operator::from_rows([[ZERO, ZERO], [ONE, ZERO]])
        }
    }
}

/// A pure state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amps: Vec<C64>,
}

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Self {
        StateVector { amps }
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        StateVector { amps }
    }

    pub fn ket0() -> Self {
        Self::basis(2, 0)
    }

    pub fn ket1() -> Self {
        Self::basis(2, 1)
    }

    /// `(|0> + |1>)/sqrt 2`
    pub fn plus_x() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        StateVector::new(vec![C64::new(s, 0.0), C64::new(s, 0.0)])
    }

    /// `(|0> + i|1>)/sqrt 2`
    pub fn plus_y() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        StateVector::new(vec![C64::new(s, 0.0), C64::new(0.0, s)])
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `<self|other>`
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `|<self|other>|^2`
    pub fn overlap(&self, other: &StateVector) -> f64 {
        self.inner(other).norm_sqr()
    }

    /// `|psi> (x) |other>`
    pub fn tensor(&self, other: &StateVector) -> StateVector {
        let amps = self
            .amps
            .iter()
            .flat_map(|a| other.amps.iter().map(move |b| a * b))
            .collect();
        StateVector { amps }
    }
}

/// `exp(-i H t)` for Hermitian `H`.
///
/// Dimension 2 uses the closed SU(2) form
/// `exp(-i theta n.sigma/2) = cos(theta/2) I - i sin(theta/2) n.sigma`
/// (times the trace phase); larger dimensions diagonalise.
pub fn expm_hermitian(h: &Operator, t: f64) -> Result<Operator, QuantumError> {
    check_dim(h.dim)?;
    let dev = h.hermiticity_deviation();
    if dev > 1e-12 * h.max_abs().max(1.0) {
        return Err(QuantumError::NotHermitian { deviation: dev });
    }
    Ok(expm_unchecked(h, t))
}

/// Eigendecomposition route for any dimension; exposed so the SU(2) closed
/// form can be cross-checked against it.
pub fn expm_hermitian_eig(h: &Operator, t: f64) -> Result<Operator, QuantumError> {
    check_dim(h.dim)?;
    let dev = h.hermiticity_deviation();
    if dev > 1e-12 * h.max_abs().max(1.0) {
        return Err(QuantumError::NotHermitian { deviation: dev });
    }
    Ok(expm_eig(h, t))
}

fn check_dim(dim: usize) -> Result<(), QuantumError> {
    if dim < 2 || dim > MAX_DIM || !dim.is_power_of_two() {
        return Err(QuantumError::BadDimension(dim));
    }
    Ok(())
}

pub(crate) fn expm_unchecked(h: &Operator, t: f64) -> Operator {
    if h.dim == 2 {
        let m = su2_exp([h.data[0], h.data[1], h.data[2], h.data[3]], t);
        Operator::from_row_major(m.to_vec())
    } else {
        expm_eig(h, t)
    }
}

fn expm_eig(h: &Operator, t: f64) -> Operator {
    let n = h.dim;
    let (vals, v) = hermitian_eigen(h);
    let phases: Vec<C64> = vals.iter().map(|&l| C64::from_polar(1.0, -l * t)).collect();
    let mut out = Operator::zeros(n);
    for r in 0..n {
        for c in 0..n {
            let mut acc = ZERO;
            for k in 0..n {
                acc += v.data[r * n + k] * phases[k] * v.data[c * n + k].conj();
            }
            out.data[r * n + c] = acc;
        }
    }
    out
}

/// Eigenvalues and eigenvectors (as columns) of a Hermitian matrix by cyclic
/// complex Jacobi rotations.
pub fn hermitian_eigen(h: &Operator) -> (Vec<f64>, Operator) {
    let n = h.dim;
    let mut a = Operator::zeros(n);
    for r in 0..n {
        for c in 0..n {
            a.data[r * n + c] = 0.5 * (h.data[r * n + c] + h.data[c * n + r].conj());
        }
    }
    let mut v = Operator::identity(n);
    let scale: f64 = a.data.iter().map(|z| z.norm_sqr()).sum();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a.data[p * n + q].norm_sqr();
            }
        }
        if off <= 1e-32 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let b = a.data[p * n + q];
                let mag = b.norm();
                if mag == 0.0 {
                    continue;
                }
                let phase = b / mag;
                let alpha = a.data[p * n + p].re;
                let gamma = a.data[q * n + q].re;
                let tau = (gamma - alpha) / (2.0 * mag);
                let tt = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + tt * tt).sqrt();
                let s = tt * c;
                // J = diag(1, e^{-i theta}) [[c, s], [-s, c]] on (p, q)
                let jpp = C64::new(c, 0.0);
                let jpq = C64::new(s, 0.0);
                let jqp = -phase.conj() * s;
                let jqq = phase.conj() * c;
                for k in 0..n {
                    let akp = a.data[k * n + p];
                    let akq = a.data[k * n + q];
                    a.data[k * n + p] = akp * jpp + akq * jqp;
                    a.data[k * n + q] = akp * jpq + akq * jqq;
                    let vkp = v.data[k * n + p];
                    let vkq = v.data[k * n + q];
                    v.data[k * n + p] = vkp * jpp + vkq * jqp;
                    v.data[k * n + q] = vkp * jpq + vkq * jqq;
                }
                for k in 0..n {
                    let apk = a.data[p * n + k];
                    let aqk = a.data[q * n + k];
                    a.data[p * n + k] = jpp.conj() * apk + jqp.conj() * aqk;
                    a.data[q * n + k] = jpq.conj() * apk + jqq.conj() * aqk;
                }
                a.data[p * n + q] = ZERO;
                a.data[q * n + p] = ZERO;
                a.data[p * n + p] = C64::new(a.data[p * n + p].re, 0.0);
                a.data[q * n + q] = C64::new(a.data[q * n + q].re, 0.0);
            }
        }
    }
    let vals = (0..n).map(|i| a.data[i * n + i].re).collect();
    (vals, v)
}

/// Closed-form `exp(-i H t)` for a 2x2 Hermitian matrix in row-major order.
#[inline]
pub(crate) fn su2_exp(h: [C64; 4], t: f64) -> [C64; 4] {
    let a0 = 0.5 * (h[0].re + h[3].re);
    let ax = h[1].re;
    let ay = h[1].im;
    let az = 0.5 * (h[3].re - h[0].re);
    let norm = (ax * ax + ay * ay + az * az).sqrt();
    let theta = norm * t;
    let (s, c) = theta.sin_cos();
    // sin(theta)/norm, finite as norm -> 0
    let k = if theta.abs() < 1e-8 {
        t * (1.0 - theta * theta / 6.0)
    } else {
        s / norm
    };
    let g = C64::from_polar(1.0, -a0 * t);
    // cos(theta) I - i k (a . sigma), a.sigma = [[-az, ax + i ay], [ax - i ay, az]]
    let m00 = C64::new(c, k * az);
    let m11 = C64::new(c, -k * az);
    let m01 = C64::new(0.0, -k) * C64::new(ax, ay);
    let m10 = C64::new(0.0, -k) * C64::new(ax, -ay);
    [g * m00, g * m01, g * m10, g * m11]
}

#[inline]
pub(crate) fn mat2_mul(a: &[C64; 4], b: &[C64; 4]) -> [C64; 4] {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

/// Hermitian generator of one timeline segment.
#[derive(Clone)]
pub enum Generator {
    Constant(Operator),
    /// `H(t)` written into the supplied buffer (already sized, not cleared)
    /// at absolute time `t`.
    TimeDependent {
        dim: usize,
        eval: Arc<dyn Fn(f64, &mut Operator) + Send + Sync>,
    },
    /// `H(t) = fixed + f(t) * modulated` with `[fixed, modulated] = 0`.
    /// `integral(t0, t1)` returns `int_t0^t1 f`. Integrated exactly.
    Commuting {
        fixed: Operator,
        modulated: Operator,
        integral: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    },
}

impl Generator {
    pub fn dim(&self) -> usize {
        match self {
            Generator::Constant(h) => h.dim(),
            Generator::TimeDependent { dim, .. } => *dim,
            Generator::Commuting { fixed, .. } => fixed.dim(),
        }
    }

    /// Instantaneous value `H(t)`.
    pub fn at(&self, t: f64) -> Operator {
        match self {
            Generator::Constant(h) => h.clone(),
            Generator::TimeDependent { dim, eval } => {
                let mut h = Operator::zeros(*dim);
                eval(t, &mut h);
                h
            }
            Generator::Commuting {
                fixed,
                modulated,
                integral,
            } => {
                // numerical derivative of the integral at t
                let eps = 1e-12_f64.max(t.abs() * 1e-9);
                let f = integral(t - eps, t + eps) / (2.0 * eps);
                let mut h = fixed.clone();
                h.add_scaled(modulated, C64::new(f, 0.0));
                h
            }
        }
    }
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Constant(h) => write!(f, "Constant(dim {})", h.dim()),
            Generator::TimeDependent { dim, .. } => write!(f, "TimeDependent(dim {dim})"),
            Generator::Commuting { fixed, .. } => write!(f, "Commuting(dim {})", fixed.dim()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Segment {
    pub duration: f64,
    pub generator: Generator,
    /// Overrides the global `dt_max` for this segment.
    pub max_step: Option<f64>,
}

/// One entry of a timeline: either evolution under a generator or an
/// instantaneous unitary (ideal delta pulse).
#[derive(Clone, Debug)]
pub enum TimelineEntry {
    Evolve(Segment),
    Kick(Operator),
}

/// Ordered list of segments starting at absolute time `start`.
#[derive(Clone, Debug)]
pub struct HamiltonianTimeline {
    dim: usize,
    start: f64,
    entries: Vec<TimelineEntry>,
}

impl HamiltonianTimeline {
    pub fn new(dim: usize, start: f64) -> Self {
        HamiltonianTimeline {
            dim,
            start,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn entries(&self) -> &[TimelineEntry] {
        &self.entries
    }

    pub fn push_segment(&mut self, duration: f64, generator: Generator) -> Result<(), QuantumError> {
        self.push_segment_with_step(duration, generator, None)
    }

    pub fn push_segment_with_step(
        &mut self,
        duration: f64,
        generator: Generator,
        max_step: Option<f64>,
    ) -> Result<(), QuantumError> {
        if let Some(h) = max_step {
            if !(h > 0.0) || !h.is_finite() {
                return Err(QuantumError::BadStep(h));
            }
        }
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(QuantumError::BadDuration(duration));
        }
        if generator.dim() != self.dim {
            return Err(QuantumError::DimensionMismatch {
                left: self.dim,
                right: generator.dim(),
            });
        }
        self.entries.push(TimelineEntry::Evolve(Segment {
            duration,
            generator,
            max_step,
        }));
        Ok(())
    }

    pub fn push_kick(&mut self, unitary: Operator) -> Result<(), QuantumError> {
        if unitary.dim() != self.dim {
            return Err(QuantumError::DimensionMismatch {
                left: self.dim,
                right: unitary.dim(),
            });
        }
        self.entries.push(TimelineEntry::Kick(unitary));
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| match e {
                TimelineEntry::Evolve(s) => s.duration,
                TimelineEntry::Kick(_) => 0.0,
            })
            .sum()
    }

    /// Splits the timeline at an offset from its start. Used for composition
    /// checks; segments straddling the cut are divided.
    pub fn split_at(&self, offset: f64) -> (HamiltonianTimeline, HamiltonianTimeline) {
        let mut first = HamiltonianTimeline::new(self.dim, self.start);
        let mut second = HamiltonianTimeline::new(self.dim, self.start + offset);
        let mut t = 0.0;
        for e in &self.entries {
            match e {
                TimelineEntry::Kick(u) => {
                    if t < offset {
                        first.entries.push(TimelineEntry::Kick(u.clone()));
                    } else {
                        second.entries.push(TimelineEntry::Kick(u.clone()));
                    }
                }
                TimelineEntry::Evolve(s) => {
                    let end = t + s.duration;
                    if end <= offset {
                        first.entries.push(e.clone());
                    } else if t >= offset {
                        second.entries.push(e.clone());
                    } else {
                        first.entries.push(TimelineEntry::Evolve(Segment {
                            duration: offset - t,
                            generator: s.generator.clone(),
                            max_step: s.max_step,
                        }));
                        second.entries.push(TimelineEntry::Evolve(Segment {
                            duration: end - offset,
                            generator: s.generator.clone(),
                            max_step: s.max_step,
                        }));
                    }
                    t = end;
                }
            }
        }
        (first, second)
    }
}

/// Time-ordered propagator of `timeline`.
///
/// Time-dependent segments are cut into `ceil(duration/dt_max)` equal steps,
/// each using the generator at the step midpoint. Constant and commuting
/// segments are exponentiated exactly in one step.
pub fn propagate(timeline: &HamiltonianTimeline, dt_max: f64) -> Result<Operator, QuantumError> {
    if !(dt_max > 0.0) || !dt_max.is_finite() {
        return Err(QuantumError::BadStep(dt_max));
    }
    check_dim(timeline.dim)?;
    if timeline.dim == 2 {
        Ok(propagate_qubit(timeline, dt_max).into())
    } else {
        Ok(propagate_general(timeline, dt_max))
    }
}

fn steps_for(duration: f64, dt_max: f64) -> usize {
    // slack stops round-off from adding a sliver step
    ((duration / dt_max) - 1e-9).ceil().max(1.0) as usize
}

fn propagate_qubit(timeline: &HamiltonianTimeline, dt_max: f64) -> [C64; 4] {
    let mut acc = [ONE, ZERO, ZERO, ONE];
    let mut t = timeline.start;
    let mut buf = Operator::zeros(2);
    for entry in &timeline.entries {
        match entry {
            TimelineEntry::Kick(u) => {
                let u = [u.data[0], u.data[1], u.data[2], u.data[3]];
                acc = mat2_mul(&u, &acc);
            }
            TimelineEntry::Evolve(seg) => {
                match &seg.generator {
                    Generator::Constant(h) => {
                        let u = su2_exp([h.data[0], h.data[1], h.data[2], h.data[3]], seg.duration);
                        acc = mat2_mul(&u, &acc);
                    }
                    Generator::Commuting {
                        fixed,
                        modulated,
                        integral,
                    } => {
                        let w = integral(t, t + seg.duration);
                        let mut h = [ZERO; 4];
                        for k in 0..4 {
                            h[k] = fixed.data[k] * seg.duration + modulated.data[k] * w;
                        }
                        acc = mat2_mul(&su2_exp(h, 1.0), &acc);
                    }
                    Generator::TimeDependent { eval, .. } => {
                        let n = steps_for(seg.duration, seg.max_step.unwrap_or(dt_max));
                        let dt = seg.duration / n as f64;
                        for k in 0..n {
                            buf.fill_zero();
                            eval(t + (k as f64 + 0.5) * dt, &mut buf);
                            let h = [buf.data[0], buf.data[1], buf.data[2], buf.data[3]];
                            acc = mat2_mul(&su2_exp(h, dt), &acc);
                        }
                    }
                }
                t += seg.duration;
            }
        }
    }
    acc
}

impl From<[C64; 4]> for Operator {
    fn from(m: [C64; 4]) -> Self {
        Operator::from_row_major(m.to_vec())
    }
}

fn propagate_general(timeline: &HamiltonianTimeline, dt_max: f64) -> Operator {
    let n = timeline.dim;
    let mut acc = Operator::identity(n);
    let mut tmp = Operator::zeros(n);
    let mut buf = Operator::zeros(n);
    let mut t = timeline.start;
    let left_mul = |u: &Operator, acc: &mut Operator, tmp: &mut Operator| {
        u.matmul_into(acc, tmp);
        std::mem::swap(acc, tmp);
    };
    for entry in &timeline.entries {
        match entry {
            TimelineEntry::Kick(u) => left_mul(u, &mut acc, &mut tmp),
            TimelineEntry::Evolve(seg) => {
                match &seg.generator {
                    Generator::Constant(h) => {
                        let u = expm_eig(h, seg.duration);
                        left_mul(&u, &mut acc, &mut tmp);
                    }
                    Generator::Commuting {
                        fixed,
                        modulated,
                        integral,
                    } => {
                        let w = integral(t, t + seg.duration);
                        let mut h = fixed.scale_real(seg.duration);
                        h.add_scaled(modulated, C64::new(w, 0.0));
                        let u = expm_eig(&h, 1.0);
                        left_mul(&u, &mut acc, &mut tmp);
                    }
                    Generator::TimeDependent { eval, .. } => {
                        let steps = steps_for(seg.duration, seg.max_step.unwrap_or(dt_max));
                        let dt = seg.duration / steps as f64;
                        for k in 0..steps {
                            buf.fill_zero();
                            eval(t + (k as f64 + 0.5) * dt, &mut buf);
                            let u = expm_eig(&buf, dt);
                            left_mul(&u, &mut acc, &mut tmp);
                        }
                    }
                }
                t += seg.duration;
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::pauli::*;
    use super::*;
    use std::f64::consts::PI;

    fn rng_hermitian2(seed: u64) -> Operator {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a0: f64 = r.gen_range(-3.0..3.0);
        let n = [
            r.gen_range(-3.0..3.0),
            r.gen_range(-3.0..3.0),
            r.gen_range(-3.0..3.0),
        ];
        let mut h = sigma_dot(n);
        h.add_scaled(&identity(), C64::new(a0, 0.0));
        h
    }

    #[test]
    fn pi_rotation_about_x() {
        let t = 2.5e-7;
        let h = sigma_x().scale_real(PI / 2.0 / t);
        let u = expm_hermitian(&h, t).unwrap();
        let expected = sigma_x().scale(-I);
        assert!(u.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn zero_generator_is_identity() {
        let u = expm_hermitian(&Operator::zeros(2), 1.0).unwrap();
        assert_eq!(u.max_abs_diff(&identity()), 0.0);
        let u4 = expm_hermitian(&Operator::zeros(4), 1.0).unwrap();
        assert!(u4.max_abs_diff(&Operator::identity(4)) < 1e-15);
    }

    #[test]
    fn non_hermitian_rejected() {
        let err = expm_hermitian(&sigma_plus(), 1.0).unwrap_err();
        assert!(matches!(err, QuantumError::NotHermitian { .. }));
    }

    #[test]
    fn bad_dimension_rejected() {
        let h = Operator::zeros(3);
        assert_eq!(expm_hermitian(&h, 1.0).unwrap_err(), QuantumError::BadDimension(3));
        assert!(expm_hermitian(&Operator::zeros(32), 1.0).is_err());
    }

    #[test]
    fn closed_form_matches_trotter_product() {
        // 64-step Trotter product of the z and x parts as an independent route
        let phi = PI / 3.0;
        let t = 1.0e-7;
        let scale = PI / 2.0 / t;
        let hz = sigma_z().scale_real(phi.cos() * scale);
        let hx = sigma_x().scale_real(phi.sin() * scale);
        let h = &hz + &hx;
        let u = expm_hermitian(&h, t).unwrap();

        // Symmetric (Strang) splitting, 64 steps
        let steps = 64;
        let dt = t / steps as f64;
        let half_z = expm_hermitian(&hz, dt / 2.0).unwrap();
        let full_x = expm_hermitian(&hx, dt).unwrap();
        let step = &(&half_z * &full_x) * &half_z;
        let mut trotter = identity();
        for _ in 0..steps {
            trotter = &step * &trotter;
        }
        assert!(
            u.max_abs_diff(&trotter) < 1e-3,
            "Strang product is a sanity route only"
        );

        // Richardson extrapolation of Strang products removes the O(dt^2) term
        let strang = |steps: usize| {
            let dt = t / steps as f64;
            let half_z = expm_hermitian(&hz, dt / 2.0).unwrap();
            let full_x = expm_hermitian(&hx, dt).unwrap();
            let step = &(&half_z * &full_x) * &half_z;
            let mut acc = identity();
            for _ in 0..steps {
                acc = &step * &acc;
            }
            acc
        };
        let a = strang(64);
        let b = strang(128);
        let mut extrap = b.scale_real(4.0 / 3.0);
        extrap.add_scaled(&a, C64::new(-1.0 / 3.0, 0.0));
        assert!(u.max_abs_diff(&extrap) < 1e-8, "{}", u.max_abs_diff(&extrap));
    }

    #[test]
    fn closed_form_agrees_with_eigendecomposition() {
        for seed in 0..200 {
            let h = rng_hermitian2(seed);
            let t = 0.37 + seed as f64 * 0.01;
            let a = expm_hermitian(&h, t).unwrap();
            let b = expm_hermitian_eig(&h, t).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-12, "seed {seed}: {}", a.max_abs_diff(&b));
        }
    }

    #[test]
    fn eig_route_on_degenerate_tensor() {
        // doubly degenerate spectrum; exact values once broke an iterative QR solver
        let q = sigma_dot([2.0 * PI * 0.5e6, 0.0, 267525.0188862998 / 0.5 * 0.5]);
        let q = &q + &Operator::zeros(2);
        let h4 = tensor(&q, &identity());
        for t in [1e-9, 3.7e-7] {
            let a = tensor(&expm_hermitian(&q, t).unwrap(), &identity());
            let b = expm_hermitian_eig(&h4, t).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-13);
        }
        let (vals, v) = hermitian_eigen(&h4);
        assert!(v.unitarity_error() < 1e-14);
        let mut recon = Operator::zeros(4);
        for k in 0..4 {
            let col = StateVector::new((0..4).map(|r| v.get(r, k)).collect());
            recon.add_scaled(&Operator::outer(&col, &col), C64::new(vals[k], 0.0));
        }
        assert!(recon.max_abs_diff(&h4) < 1e-9 * h4.max_abs());
    }

    #[test]
    fn tensor_of_identities() {
        let i4 = tensor(&identity(), &identity());
        assert_eq!(i4, Operator::identity(4));
    }

    #[test]
    fn disjoint_subsystems_commute() {
        let a = tensor(&sigma_z(), &identity());
        let b = tensor(&identity(), &sigma_x());
        assert!((&a * &b).max_abs_diff(&(&b * &a)) < 1e-15);
    }

    #[test]
    fn tensor_matches_index_construction() {
        // (sigma_z (x) I)(I (x) I^x) built entry by entry
        let ix = spin_half::ix();
        let lhs = &tensor(&sigma_z(), &identity()) * &tensor(&identity(), &ix);
        let sz = sigma_z();
        let mut direct = Operator::zeros(4);
        for q in 0..2 {
            for qp in 0..2 {
                for n in 0..2 {
                    for np in 0..2 {
                        direct.set(q * 2 + n, qp * 2 + np, sz.get(q, qp) * ix.get(n, np));
                    }
                }
            }
        }
        assert!(lhs.max_abs_diff(&direct) < 1e-15);
    }

    #[test]
    fn pauli_algebra() {
        let xy = &sigma_x() * &sigma_y();
        assert!(xy.max_abs_diff(&sigma_z().scale(I)) < 1e-15);
        let sp = (&sigma_x() + &sigma_y().scale(I)).scale_real(0.5);
        assert!(sp.max_abs_diff(&sigma_plus()) < 1e-15);
        // sigma_phi(phi) = sigma_x cos(phi) + sigma_y sin(phi)
        let phi = 0.3_f64;
        let mut s = sigma_x().scale_real(phi.cos());
        s.add_scaled(&sigma_y(), C64::new(phi.sin(), 0.0));
        assert!(sigma_phi(phi).max_abs_diff(&s) < 1e-15);
    }

    #[test]
    fn single_constant_segment_equals_expm() {
        let h = rng_hermitian2(7);
        let mut tl = HamiltonianTimeline::new(2, 0.0);
        tl.push_segment(0.8, Generator::Constant(h.clone())).unwrap();
        let u = propagate(&tl, 0.01).unwrap();
        assert!(u.max_abs_diff(&expm_hermitian(&h, 0.8).unwrap()) < 1e-15);
    }

    fn driven_timeline(dim_boost: bool) -> HamiltonianTimeline {
        let dim = if dim_boost { 4 } else { 2 };
        let mut tl = HamiltonianTimeline::new(dim, 0.0);
        let omega = 2.0 * PI * 1.0e6;
        let nu = 2.0 * PI * 0.5e6;
        let eval = Arc::new(move |t: f64, h: &mut Operator| {
            let b = 2.0 * PI * 0.2e6 * (nu * t).cos();
            let q = sigma_dot([0.5 * omega, 0.0, 0.5 * b]);
            if h.dim() == 2 {
                *h = q;
            } else {
                *h = tensor(&q, &identity());
            }
        });
        tl.push_segment(1.0e-6, Generator::TimeDependent { dim, eval })
            .unwrap();
        tl
    }

    #[test]
    fn composition_of_halves() {
        for boost in [false, true] {
            let tl = driven_timeline(boost);
            let dt = 1e-9;
            let whole = propagate(&tl, dt).unwrap();
            let (a, b) = tl.split_at(0.5e-6);
            let ua = propagate(&a, dt).unwrap();
            let ub = propagate(&b, dt).unwrap();
            let d = (&ub * &ua).max_abs_diff(&whole);
            assert!(d < 1e-10, "{d}");
            assert!(whole.unitarity_error() < 1e-9);
        }
    }

    #[test]
    fn midpoint_rule_self_converges() {
        let tl = driven_timeline(false);
        let a = propagate(&tl, 4e-9).unwrap();
        let b = propagate(&tl, 2e-9).unwrap();
        let c = propagate(&tl, 1e-9).unwrap();
        let d1 = a.max_abs_diff(&b);
        let d2 = b.max_abs_diff(&c);
        // second order: error ratio ~ 4
        assert!(d2 < d1 / 3.0, "{d1} {d2}");
    }

    #[test]
    fn commuting_segment_is_exact() {
        let nu = 2.0 * PI * 3.0e5;
        let b0 = 2.0 * PI * 1.0e4;
        let integral = Arc::new(move |t0: f64, t1: f64| b0 / nu * ((nu * t1).sin() - (nu * t0).sin()));
        let mut tl = HamiltonianTimeline::new(2, 1.0e-6);
        tl.push_segment(
            2.0e-6,
            Generator::Commuting {
                fixed: Operator::zeros(2),
                modulated: sigma_z().scale_real(0.5),
                integral: integral.clone(),
            },
        )
        .unwrap();
        let u = propagate(&tl, 1.0).unwrap();
        let w = integral(1.0e-6, 3.0e-6);
        let expected = expm_hermitian(&sigma_z().scale_real(0.5 * w), 1.0).unwrap();
        assert!(u.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn bad_step_rejected() {
        let tl = HamiltonianTimeline::new(2, 0.0);
        assert!(propagate(&tl, 0.0).is_err());
        assert!(propagate(&tl, f64::NAN).is_err());
    }

    #[test]
    fn zero_duration_segment_rejected() {
        let mut tl = HamiltonianTimeline::new(2, 0.0);
        assert!(tl.push_segment(0.0, Generator::Constant(identity())).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn expm_is_unitary_and_norm_preserving(
                a0 in -5.0..5.0f64, x in -5.0..5.0f64, y in -5.0..5.0f64, z in -5.0..5.0f64,
                t in 0.0..10.0f64, re in -1.0..1.0f64, im in -1.0..1.0f64,
            ) {
                let mut h = sigma_dot([x, y, z]);
                h.add_scaled(&identity(), C64::new(a0, 0.0));
                let u = expm_hermitian(&h, t).unwrap();
                prop_assert!(u.unitarity_error() < 1e-9);
                let psi = StateVector::new(vec![C64::new(re, im), C64::new(0.3, -0.2)]);
                let n = psi.norm();
                let psi = StateVector::new(psi.amplitudes().iter().map(|z| z / n).collect());
                prop_assert!((u.apply(&psi).norm() - 1.0).abs() < 1e-10);
            }

            #[test]
            fn eig_expm_is_unitary_and_matches_taylor(
                entries in proptest::collection::vec(-2.0..2.0f64, 128),
                dim_pow in 2u32..5,
                t in 0.01..1.0f64,
            ) {
                let n = 1usize << dim_pow;
                let mut h = Operator::zeros(n);
                let mut idx = 0;
                for r in 0..n {
                    for c in r..n {
                        let re = entries[idx % 128];
                        let im = if r == c { 0.0 } else { entries[(idx + 64) % 128] };
                        idx += 1;
                        h.set(r, c, C64::new(re, im));
                        h.set(c, r, C64::new(re, -im));
                    }
                }
                let u = expm_hermitian(&h, t).unwrap();
                prop_assert!(u.unitarity_error() < 1e-12);
                let mut taylor = Operator::identity(n);
                let mut term = Operator::identity(n);
                for k in 1..80 {
                    term = (&term * &h).scale(C64::new(0.0, -t / k as f64));
                    taylor = &taylor + &term;
                }
                prop_assert!(u.max_abs_diff(&taylor) < 1e-11);
            }

            #[test]
            fn su2_agrees_with_eig(x in -5.0..5.0f64, y in -5.0..5.0f64, z in -5.0..5.0f64, t in -3.0..3.0f64) {
                let h = sigma_dot([x, y, z]);
                let a = expm_hermitian(&h, t).unwrap();
                let b = expm_hermitian_eig(&h, t).unwrap();
                prop_assert!(a.max_abs_diff(&b) < 1e-12);
            }
        }
    }
}
