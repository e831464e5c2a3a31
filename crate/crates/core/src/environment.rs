//! Everything the sensor couples to: classical AC tones, Ornstein-Uhlenbeck
//! dephasing and amplitude noise, static control errors, and a bath of
//! non-interacting nuclear spins.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{pauli, tensor, Generator, Operator, C64, MAX_DIM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvironmentError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("nuclear bath of {0} spins exceeds the Hilbert-space cap of 3 spins")]
    TooManySpins(usize),
    #[error("coherence never crossed 1/e within t_max = {0:.3e} s (not reached)")]
    NotReached(f64),
}

/// One classical tone `b cos(nu t + theta)`; `alpha` orients a transverse
/// field in the xy plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub b: f64,
    pub nu: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AcField {
    tones: Vec<Tone>,
}

impl AcField {
    /// Tones are sorted by frequency for deterministic output.
    pub fn new(mut tones: Vec<Tone>) -> Result<Self, EnvironmentError> {
        for t in &tones {
            if !(t.b >= 0.0) || !t.b.is_finite() {
                return Err(EnvironmentError::InvalidParam {
                    field: "b",
                    reason: format!("tone amplitude must be >= 0, got {}", t.b),
                });
            }
            if !t.nu.is_finite() || !t.theta.is_finite() || !t.alpha.is_finite() {
                return Err(EnvironmentError::InvalidParam {
                    field: "nu",
                    reason: "tone parameters must be finite".into(),
                });
            }
        }
        tones.sort_by(|a, b| a.nu.total_cmp(&b.nu));
        Ok(AcField { tones })
    }

    pub fn empty() -> Self {
        AcField { tones: Vec::new() }
    }

    pub fn tones(&self) -> &[Tone] {
        &self.tones
    }

    pub fn is_silent(&self) -> bool {
        self.tones.iter().all(|t| t.b == 0.0)
    }

    /// `B(t) = sum b_j cos(nu_j t + theta_j)`
    pub fn eval(&self, t: f64) -> f64 {
        self.tones
            .iter()
            .map(|tone| tone.b * (tone.nu * t + tone.theta).cos())
            .sum()
    }

    /// `B_perp(t) = sum b_j e^{i alpha_j} cos(nu_j t + theta_j)`
    pub fn transverse(&self, t: f64) -> Complex64 {
        self.tones
            .iter()
            .map(|tone| C64::from_polar(tone.b, tone.alpha) * (tone.nu * t + tone.theta).cos())
            .sum()
    }

    /// Exact `int_t0^t1 B(t) dt`.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        self.tones
            .iter()
            .map(|tone| {
                if tone.nu == 0.0 {
                    tone.b * tone.theta.cos() * (t1 - t0)
                } else {
                    tone.b / tone.nu * ((tone.nu * t1 + tone.theta).sin() - (tone.nu * t0 + tone.theta).sin())
                }
            })
            .sum()
    }

    /// Assigns `alpha_j`, `theta_j` uniform on `[0, 2 pi)` from `seed`, in
    /// tone order (alpha then theta per tone).
    pub fn with_random_phases(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tones = self
            .tones
            .iter()
            .map(|t| {
                let alpha = rng.gen_range(0.0..2.0 * PI);
                let theta = rng.gen_range(0.0..2.0 * PI);
                Tone { alpha, theta, ..*t }
            })
            .collect();
        AcField { tones }
    }

    pub fn max_frequency(&self) -> f64 {
        self.tones
            .iter()
            .filter(|t| t.b != 0.0)
            .map(|t| t.nu.abs())
            .fold(0.0, f64::max)
    }
}

/// Stationary OU process with correlation time `tau_c` and standard
/// deviation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuProcess {
    pub tau_c: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl OuProcess {
    pub fn new(tau_c: f64, sigma: f64, seed: u64) -> Result<Self, EnvironmentError> {
        if !(tau_c > 0.0) || !tau_c.is_finite() {
            return Err(EnvironmentError::InvalidParam {
                field: "tau_c",
                reason: format!("correlation time must be positive, got {tau_c}"),
            });
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(EnvironmentError::InvalidParam {
                field: "sigma",
                reason: format!("standard deviation must be >= 0, got {sigma}"),
            });
        }
        Ok(OuProcess { tau_c, sigma, seed })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        OuProcess { seed, ..*self }
    }
}

/// Exact discrete OU update; `x_0` is drawn from the stationary law.
pub fn ou_sample_path(p: &OuProcess, dt: f64, n_steps: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let decay = (-dt / p.tau_c).exp();
    let kick = p.sigma * (1.0 - decay * decay).sqrt();
    let mut out = Vec::with_capacity(n_steps);
    if n_steps == 0 {
        return out;
    }
    let z: f64 = StandardNormal.sample(&mut rng);
    let mut x = p.sigma * z;
    out.push(x);
    for _ in 1..n_steps {
        let z: f64 = StandardNormal.sample(&mut rng);
        x = x * decay + kick * z;
        out.push(x);
    }
    out
}

/// Piecewise-constant sample path on `[t0, t0 + n dt)` with cumulative
/// integrals for exact phase accumulation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    t0: f64,
    dt: f64,
    values: Vec<f64>,
    prefix: Vec<f64>,
}

impl NoisePath {
    pub fn sample(p: &OuProcess, t0: f64, duration: f64, dt: f64) -> Self {
        let n = ((duration / dt).ceil() as usize).max(1) + 1;
        Self::from_values(t0, dt, ou_sample_path(p, dt, n))
    }

    pub fn from_values(t0: f64, dt: f64, values: Vec<f64>) -> Self {
        let mut prefix = Vec::with_capacity(values.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for v in &values {
            acc += v * dt;
            prefix.push(acc);
        }
        NoisePath {
            t0,
            dt,
            values,
            prefix,
        }
    }

    pub fn zero() -> Self {
        Self::from_values(0.0, f64::INFINITY, vec![0.0])
    }

    fn cell(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.dt).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.values.len() - 1)
        }
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        self.values[self.cell(t)]
    }

    /// Cumulative integral from `t0` to `t`.
    fn cumulative(&self, t: f64) -> f64 {
        if !self.dt.is_finite() {
            return self.values[0] * (t - self.t0);
        }
        let k = self.cell(t);
        self.prefix[k] + self.values[k] * (t - self.t0 - k as f64 * self.dt)
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.cumulative(b) - self.cumulative(a)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Free-induction coherence `|<exp(-i int_0^t dB)>|` on a uniform grid.
pub fn free_induction_decay(p: &OuProcess, t_max: f64, n_grid: usize, n_mc: usize) -> (Vec<f64>, Vec<f64>) {
    let dt = t_max / n_grid as f64;
    let t: Vec<f64> = (0..=n_grid).map(|k| k as f64 * dt).collect();
    let mut sum = vec![C64::new(0.0, 0.0); n_grid + 1];
    for r in 0..n_mc {
        let path = ou_sample_path(&p.with_seed(derive_seed(p.seed, r as u64, 0)), dt, n_grid);
        let mut phase = 0.0;
        sum[0] += C64::new(1.0, 0.0);
        for k in 0..n_grid {
            phase += path[k] * dt;
            sum[k + 1] += C64::from_polar(1.0, -phase);
        }
    }
    let coherence = sum.iter().map(|z| z.norm() / n_mc as f64).collect();
    (t, coherence)
}

/// First 1/e crossing of the free-induction coherence, linearly interpolated.
pub fn free_induction_t2star(p: &OuProcess, t_max: f64, n_mc: usize) -> Result<f64, EnvironmentError> {
    let n_grid = 2000;
    let (t, c) = free_induction_decay(p, t_max, n_grid, n_mc.max(1));
    let target = (-1.0f64).exp();
    for k in 1..t.len() {
        if c[k] <= target && c[k - 1] > target {
            let f = (c[k - 1] - target) / (c[k - 1] - c[k]);
            return Ok(t[k - 1] + f * (t[k] - t[k - 1]));
        }
    }
    Err(EnvironmentError::NotReached(t_max))
}

/// Splitmix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for realization `b` of work item `a` under `master`. Independent of
/// evaluation order and worker count.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    mix(mix(mix(master) ^ a) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Static and slow control imperfections: `Omega -> (1 + eta(t))(1 + eps) Omega`
/// and an extra `delta_static sigma_z/2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlErrorModel {
    pub epsilon: f64,
    pub eta: Option<OuProcess>,
    pub delta_static: f64,
}

impl ControlErrorModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), EnvironmentError> {
        if !(1.0 + self.epsilon > 0.0) {
            return Err(EnvironmentError::InvalidParam {
                field: "epsilon",
                reason: format!("1 + epsilon must be positive, got epsilon = {}", self.epsilon),
            });
        }
        if !self.delta_static.is_finite() {
            return Err(EnvironmentError::InvalidParam {
                field: "delta_static",
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// A nuclear spin with hyperfine vector `a` in a field `b_z` along z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuclearSpin {
    pub gamma: f64,
    pub a: [f64; 3],
    pub b_z: f64,
    /// effective precession frequency `|gamma B_z z - A/2|`
    pub nu: f64,
    pub a_x: f64,
    pub a_z: f64,
    pub x_hat: [f64; 3],
    pub y_hat: [f64; 3],
    pub z_hat: [f64; 3],
}

impl NuclearSpin {
    /// `gamma` in rad/s per gauss, `a` in rad/s, `b_z` in gauss.
    pub fn new(gamma: f64, a: [f64; 3], b_z: f64) -> Result<Self, EnvironmentError> {
        let nu_vec = [-a[0] / 2.0, -a[1] / 2.0, gamma * b_z - a[2] / 2.0];
        let nu = norm3(nu_vec);
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(EnvironmentError::InvalidParam {
                field: "gamma",
                reason: "effective precession frequency vanishes".into(),
            });
        }
        let z_hat = [nu_vec[0] / nu, nu_vec[1] / nu, nu_vec[2] / nu];
        let a_z = dot(a, z_hat);
        let perp = [a[0] - a_z * z_hat[0], a[1] - a_z * z_hat[1], a[2] - a_z * z_hat[2]];
        let a_x = norm3(perp);
        let x_hat = if a_x > 1e-12 * norm3(a).max(f64::MIN_POSITIVE) {
            [perp[0] / a_x, perp[1] / a_x, perp[2] / a_x]
        } else {
            // any unit vector normal to z_hat
            let trial = if z_hat[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
            let d = dot(trial, z_hat);
            let v = [trial[0] - d * z_hat[0], trial[1] - d * z_hat[1], trial[2] - d * z_hat[2]];
            let n = norm3(v);
            [v[0] / n, v[1] / n, v[2] / n]
        };
        let y_hat = cross(z_hat, x_hat);
        Ok(NuclearSpin {
            gamma,
            a,
            b_z,
            nu,
            a_x,
            a_z,
            x_hat,
            y_hat,
            z_hat,
        })
    }

    /// Proton: gamma/2pi = 4.2576 kHz/G, in-plane and axial hyperfine 0.5 kHz.
    pub fn proton(b_z: f64) -> Self {
        Self::new(
            2.0 * PI * 4.2576e3,
            [2.0 * PI * 0.5e3, 0.0, 2.0 * PI * 0.5e3],
            b_z,
        )
        .expect("preset is valid")
    }

    /// Carbon-13: gamma/2pi = 1.0705 kHz/G, hyperfine (100, 0, 28) kHz.
    pub fn carbon13(b_z: f64) -> Self {
        Self::new(
            2.0 * PI * 1.0705e3,
            [2.0 * PI * 100.0e3, 0.0, 2.0 * PI * 28.0e3],
            b_z,
        )
        .expect("preset is valid")
    }
}

/// Spin-half operator for nucleus `j` of `n`, embedded in the nuclear space.
fn embed(op: &Operator, j: usize, n: usize) -> Operator {
    let mut out = Operator::identity(1);
    for k in 0..n {
        let f = if k == j { op.clone() } else { pauli::identity() };
        out = if out.dim() == 1 { f } else { tensor(&out, &f) };
    }
    out
}

/// Qubit plus nuclei. Each nucleus is quantised along its own precession
/// axis, so local `I^z` is the textbook `diag(1/2, -1/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NuclearBath {
    spins: Vec<NuclearSpin>,
    iz: Vec<Operator>,
    ix: Vec<Operator>,
    iy: Vec<Operator>,
}

impl NuclearBath {
    pub fn spins(&self) -> &[NuclearSpin] {
        &self.spins
    }

    pub fn n_spins(&self) -> usize {
        self.spins.len()
    }

    /// Nuclear Hilbert-space dimension `2^n`.
    pub fn nuclear_dim(&self) -> usize {
        1 << self.spins.len()
    }

    /// Full dimension including the qubit.
    pub fn dim(&self) -> usize {
        2 * self.nuclear_dim()
    }

    /// Rotating-frame coupling `B(t) = sum a_x (I^x cos nu t + I^y sin nu t) + a_z I^z`
    /// on the nuclear space.
    pub fn coupling(&self, t: f64) -> Operator {
        let d = self.nuclear_dim();
        let mut b = Operator::zeros(d);
        if self.spins.is_empty() {
            return b;
        }
        for (j, s) in self.spins.iter().enumerate() {
            let (sn, cs) = (s.nu * t).sin_cos();
            b.add_scaled(&self.ix[j], C64::new(s.a_x * cs, 0.0));
            b.add_scaled(&self.iy[j], C64::new(s.a_x * sn, 0.0));
            b.add_scaled(&self.iz[j], C64::new(s.a_z, 0.0));
        }
        b
    }

    /// Lab-frame bath Hamiltonian on qubit (x) nuclei:
    /// `-sum nu_j I^z_j + sigma_z/2 (x) sum (a_z I^z_j + a_x I^x_j)`.
    pub fn lab_hamiltonian(&self) -> Operator {
        let d = self.nuclear_dim();
        let mut zeeman = Operator::zeros(d);
        let mut hyper = Operator::zeros(d);
        for (j, s) in self.spins.iter().enumerate() {
            zeeman.add_scaled(&self.iz[j], C64::new(-s.nu, 0.0));
            hyper.add_scaled(&self.iz[j], C64::new(s.a_z, 0.0));
            hyper.add_scaled(&self.ix[j], C64::new(s.a_x, 0.0));
        }
        let mut h = tensor(&pauli::identity(), &zeeman);
        h.add_scaled(&tensor(&pauli::sigma_z().scale_real(0.5), &hyper), C64::new(1.0, 0.0));
        h
    }

    /// Lifts a qubit operator to the full space.
    pub fn lift(&self, q: &Operator) -> Operator {
        tensor(q, &Operator::identity(self.nuclear_dim()))
    }
}

/// Builds the bath and the rotating-frame interaction generator
/// `H_int(t) = sigma_z (x) B(t)/2`.
pub fn build_nuclear_bath(spins: &[NuclearSpin]) -> Result<(NuclearBath, Generator), EnvironmentError> {
    let n = spins.len();
    if n > 3 || 2usize << n > MAX_DIM {
        return Err(EnvironmentError::TooManySpins(n));
    }
    let bath = NuclearBath {
        spins: spins.to_vec(),
        iz: (0..n).map(|j| embed(&pauli::spin_half::iz(), j, n)).collect(),
        ix: (0..n).map(|j| embed(&pauli::spin_half::ix(), j, n)).collect(),
        iy: (0..n).map(|j| embed(&pauli::spin_half::iy(), j, n)).collect(),
    };
    let dim = bath.dim();
    let b2 = bath.clone();
    let half_z = pauli::sigma_z().scale_real(0.5);
    let eval = std::sync::Arc::new(move |t: f64, h: &mut Operator| {
        *h = tensor(&half_z, &b2.coupling(t));
    });
    Ok((bath, Generator::TimeDependent { dim, eval }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2_field() -> AcField {
        AcField::new(vec![
            Tone { b: 2.0 * PI * 5e3, nu: 2.0 * PI * 500e3, theta: 0.0, alpha: 0.0 },
            Tone { b: 2.0 * PI * 10e3, nu: 2.0 * PI * 1500.05e3, theta: 0.0, alpha: 0.0 },
            Tone { b: 2.0 * PI * 10e3, nu: 2.0 * PI * 2499.875e3, theta: 0.0, alpha: 0.0 },
        ])
        .unwrap()
    }

    #[test]
    fn single_tone_at_zero() {
        let f = AcField::new(vec![Tone { b: 2.0 * PI * 5e3, nu: 2.0 * PI * 500e3, theta: 0.0, alpha: 0.0 }]).unwrap();
        assert_eq!(f.eval(0.0), 2.0 * PI * 5e3);
    }

    #[test]
    fn tones_sorted_and_validated() {
        let f = AcField::new(vec![
            Tone { b: 1.0, nu: 3.0, theta: 0.0, alpha: 0.0 },
            Tone { b: 1.0, nu: 1.0, theta: 0.0, alpha: 0.0 },
        ])
        .unwrap();
        assert_eq!(f.tones()[0].nu, 1.0);
        assert!(AcField::new(vec![Tone { b: -1.0, nu: 1.0, theta: 0.0, alpha: 0.0 }]).is_err());
    }

    #[test]
    fn parseval_time_average() {
        let f = fig2_field();
        let n = 2_000_000;
        let t_end = 10e-3;
        let dt = t_end / n as f64;
        let mean_sq: f64 = (0..n).map(|k| f.eval((k as f64 + 0.5) * dt).powi(2)).sum::<f64>() / n as f64;
        let expected: f64 = f.tones().iter().map(|t| t.b * t.b / 2.0).sum();
        assert!((mean_sq / expected - 1.0).abs() < 1e-3);
    }

    #[test]
    fn exact_integral_matches_quadrature() {
        let f = fig2_field();
        let (a, b) = (1.3e-6, 4.1e-6);
        let n = 200_000;
        let h = (b - a) / n as f64;
        let q: f64 = (0..n).map(|k| f.eval(a + (k as f64 + 0.5) * h)).sum::<f64>() * h;
        assert!((q - f.integral(a, b)).abs() < 1e-9);
    }

    #[test]
    fn random_phases_are_seeded() {
        let f = fig2_field();
        let a = f.with_random_phases(3);
        assert_eq!(a, f.with_random_phases(3));
        assert_ne!(a, f.with_random_phases(4));
        for (t, u) in a.tones().iter().zip(f.tones()) {
            assert_eq!((t.b, t.nu), (u.b, u.nu));
            assert!((0.0..2.0 * PI).contains(&t.alpha) && (0.0..2.0 * PI).contains(&t.theta));
        }
    }

    #[test]
    fn ou_zero_sigma_is_zero() {
        let p = OuProcess::new(1e-3, 0.0, 7).unwrap();
        assert!(ou_sample_path(&p, 1e-6, 1000).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ou_determinism() {
        let p = OuProcess::new(1e-3, 2.0, 99).unwrap();
        let a = ou_sample_path(&p, 1e-5, 500);
        let b = ou_sample_path(&p, 1e-5, 500);
        assert_eq!(a, b);
        let c = ou_sample_path(&p.with_seed(100), 1e-5, 500);
        assert_ne!(a, c);
    }

    #[test]
    fn ou_stationary_variance() {
        // dt = tau/10 gives ~ 1e5/(2*10) independent samples
        let p = OuProcess::new(1.0, 3.0, 11).unwrap();
        let x = ou_sample_path(&p, 0.1, 100_000);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        assert!((var / 9.0 - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn ou_autocorrelation_at_tau() {
        let p = OuProcess::new(1.0, 1.0, 5).unwrap();
        let mut acc = 0.0;
        let n_real = 10_000;
        for r in 0..n_real {
            let path = ou_sample_path(&p.with_seed(derive_seed(5, r, 0)), 0.1, 11);
            acc += path[0] * path[10];
        }
        let c = acc / n_real as f64;
        assert!((c / (-1.0f64).exp() - 1.0).abs() < 0.05, "{c}");
    }

    #[test]
    fn noise_path_integral() {
        let path = NoisePath::from_values(1.0, 0.5, vec![1.0, 2.0, 4.0]);
        assert_eq!(path.value(1.2), 1.0);
        assert_eq!(path.value(1.7), 2.0);
        assert_eq!(path.value(5.0), 4.0);
        assert!((path.integral(1.25, 2.25) - (0.25 + 1.0 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn t2star_quasi_static() {
        let p = OuProcess::new(4e-3, 2.0 * PI * 0.1e6, 1).unwrap();
        let t2 = free_induction_t2star(&p, 8e-6, 5000).unwrap();
        let quasi = 2f64.sqrt() / p.sigma;
        assert!((t2 / quasi - 1.0).abs() < 0.15, "{t2}");
        let p10 = OuProcess::new(4e-3, 2.0 * PI * 1.0e6, 1).unwrap();
        let t10 = free_induction_t2star(&p10, 0.8e-6, 5000).unwrap();
        assert!((t2 / t10 / 10.0 - 1.0).abs() < 0.15, "{t2} {t10}");
    }

    #[test]
    fn t2star_not_reached_without_noise() {
        let p = OuProcess::new(4e-3, 0.0, 1).unwrap();
        let (_, c) = free_induction_decay(&p, 1e-5, 100, 10);
        assert!(c.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        assert!(matches!(
            free_induction_t2star(&p, 1e-5, 10),
            Err(EnvironmentError::NotReached(_))
        ));
    }

    #[test]
    fn nuclear_presets() {
        let h = NuclearSpin::proton(100.0);
        assert!((h.nu / (2.0 * PI) - 425.51e3).abs() < 0.5e3);
        let c = NuclearSpin::carbon13(100.0);
        assert!((c.nu / (2.0 * PI) - 105.6e3).abs() < 0.2e3);
        for s in [h, c] {
            // nu_vec = gamma B z - A/2
            let nu_vec = [s.nu * s.z_hat[0], s.nu * s.z_hat[1], s.nu * s.z_hat[2]];
            let expected = [-s.a[0] / 2.0, -s.a[1] / 2.0, s.gamma * s.b_z - s.a[2] / 2.0];
            for k in 0..3 {
                assert!((nu_vec[k] - expected[k]).abs() < 1e-12 * s.nu);
            }
            // orthonormal right-handed frame
            assert!((norm3(s.x_hat) - 1.0).abs() < 1e-12);
            assert!(dot(s.x_hat, s.z_hat).abs() < 1e-12);
            let z = cross(s.x_hat, s.y_hat);
            for k in 0..3 {
                assert!((z[k] - s.z_hat[k]).abs() < 1e-12);
            }
            // A = a_z z + a_x x
            for k in 0..3 {
                assert!((s.a_z * s.z_hat[k] + s.a_x * s.x_hat[k] - s.a[k]).abs() < 1e-9 * norm3(s.a));
            }
        }
    }

    #[test]
    fn bare_spin_precesses_at_larmor() {
        let s = NuclearSpin::new(2.0 * PI * 4.2576e3, [0.0; 3], 100.0).unwrap();
        assert_eq!(s.nu, 2.0 * PI * 4.2576e3 * 100.0);
    }

    #[test]
    fn zero_hyperfine_decouples() {
        let s = NuclearSpin::new(2.0 * PI * 1e3, [0.0; 3], 100.0).unwrap();
        let (_, g) = build_nuclear_bath(&[s]).unwrap();
        assert_eq!(g.at(1.234e-5).max_abs(), 0.0);
    }

    #[test]
    fn bath_hermitian_and_capped() {
        let spins = [NuclearSpin::proton(100.0), NuclearSpin::carbon13(100.0)];
        let (bath, g) = build_nuclear_bath(&spins).unwrap();
        assert_eq!(bath.dim(), 8);
        for k in 0..50 {
            let h = g.at(k as f64 * 0.37e-6);
            assert!(h.is_hermitian(1e-12));
        }
        assert!(bath.lab_hamiltonian().is_hermitian(1e-12));
        let four = [NuclearSpin::proton(100.0); 4];
        assert_eq!(build_nuclear_bath(&four).unwrap_err(), EnvironmentError::TooManySpins(4));
    }

    #[test]
    fn seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for a in 0..50 {
            for b in 0..50 {
                assert!(seen.insert(derive_seed(42, a, b)));
            }
        }
    }

    #[test]
    fn control_error_validation() {
        let bad = ControlErrorModel { epsilon: -1.0, ..ControlErrorModel::none() };
        assert!(bad.validate().is_err());
        assert!(ControlErrorModel::none().validate().is_ok());
    }
}
