//! Modulation functions, their Fourier components, closed-form references
//! and the gate-fidelity metric.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::quantum::{expm_hermitian, mat2_mul, pauli, su2_exp, Operator, QuantumError, C64};
use crate::sequences::{GdAxis, HalfFlag, ProtocolParams, PulseSequence};

/// Uniformly sampled `F_alpha(t) = Tr[sigma_alpha U^dag sigma_z U]/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationTrace {
    pub t: Vec<f64>,
    pub f_x: Vec<f64>,
    pub f_y: Vec<f64>,
    pub f_z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumLine {
    pub omega: Vec<f64>,
    pub f_x: Vec<Complex64>,
    pub f_y: Vec<Complex64>,
    pub f_z: Vec<Complex64>,
}

/// Default grid: 20 samples per shortest finite pulse, at least 4001.
pub fn default_samples(seq: &PulseSequence) -> usize {
    let n = match seq.shortest_pulse() {
        Some(w) => (20.0 * seq.t_seq / w).ceil() as usize,
        None => 0,
    };
    n.max(4001) + 1
}

/// Bloch components of `U^dag sigma_z U` for a 2x2 unitary `u` (row-major).
#[inline]
fn heisenberg_z(u: &[C64; 4]) -> [f64; 3] {
    // U^dag sigma_z U with sigma_z = diag(-1, 1)
    let (a, b, c, d) = (u[0], u[1], u[2], u[3]);
    // M = U^dag diag(-1,1) U
    let m00 = -a.conj() * a + c.conj() * c;
    let m01 = -a.conj() * b + c.conj() * d;
    let m11 = -b.conj() * b + d.conj() * d;
    // M = fx sx + fy sy + fz sz; sx,sy from [[0, fx + i fy],[fx - i fy, 0]]
    [m01.re, m01.im, 0.5 * (m11.re - m00.re)]
}

/// Samples the modulation functions on `n_samples` uniform points spanning
/// `[0, T_seq]`. At a delta pulse the post-pulse value is reported.
pub fn modulation_functions(seq: &PulseSequence, n_samples: usize) -> ModulationTrace {
    let n_samples = n_samples.max(2);
    let t_seq = seq.t_seq;
    let dt = if t_seq > 0.0 {
        t_seq / (n_samples - 1) as f64
    } else {
        0.0
    };
    let times: Vec<f64> = (0..n_samples).map(|k| k as f64 * dt).collect();
    let mut out = ModulationTrace {
        t: times.clone(),
        f_x: Vec::with_capacity(n_samples),
        f_y: Vec::with_capacity(n_samples),
        f_z: Vec::with_capacity(n_samples),
    };
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let mut u0 = [one, zero, zero, one];
    let mut seg_start = 0.0;
    let mut k = 0;
    let push = |u: &[C64; 4], out: &mut ModulationTrace| {
        let f = heisenberg_z(u);
        out.f_x.push(f[0]);
        out.f_y.push(f[1]);
        out.f_z.push(f[2]);
    };
    for seg in &seq.segments {
        if seg.is_delta_pulse() {
            let r = seg.pi_rotation();
            let r = [r.get(0, 0), r.get(0, 1), r.get(1, 0), r.get(1, 1)];
            u0 = mat2_mul(&r, &u0);
            continue;
        }
        let h = seg.hamiltonian();
        let h = [h.get(0, 0), h.get(0, 1), h.get(1, 0), h.get(1, 1)];
        let seg_end = seg_start + seg.duration;
        while k < n_samples && times[k] < seg_end {
            let u = mat2_mul(&su2_exp(h, times[k] - seg_start), &u0);
            push(&u, &mut out);
            k += 1;
        }
        u0 = mat2_mul(&su2_exp(h, seg.duration), &u0);
        seg_start = seg_end;
    }
    while k < n_samples {
        push(&u0, &mut out);
        k += 1;
    }
    out
}

/// Trapezoid-rule `f(omega) = (1/T) int_0^T F(t) e^{i omega t} dt` at each
/// requested angular frequency.
pub fn spectrum(trace: &ModulationTrace, omegas: &[f64]) -> SpectrumLine {
    let n = trace.t.len();
    let t_total = trace.t.last().copied().unwrap_or(0.0) - trace.t.first().copied().unwrap_or(0.0);
    let mut line = SpectrumLine {
        omega: omegas.to_vec(),
        f_x: Vec::with_capacity(omegas.len()),
        f_y: Vec::with_capacity(omegas.len()),
        f_z: Vec::with_capacity(omegas.len()),
    };
    for &w in omegas {
        if n < 2 || t_total <= 0.0 {
            line.f_x.push(C64::new(0.0, 0.0));
            line.f_y.push(C64::new(0.0, 0.0));
            line.f_z.push(C64::new(0.0, 0.0));
            continue;
        }
        let mut acc = [C64::new(0.0, 0.0); 3];
        let t0 = trace.t[0];
        let dt = t_total / (n - 1) as f64;
        let step = C64::from_polar(1.0, w * dt);
        let mut e = C64::new(1.0, 0.0);
        for k in 0..n {
            // phasor recurrence, resynchronised to bound rounding drift
            if k % 4096 == 0 {
                e = C64::from_polar(1.0, w * (t0 + k as f64 * dt));
            }
            let weight = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            let ew = e * weight;
            acc[0] += ew * trace.f_x[k];
            acc[1] += ew * trace.f_y[k];
            acc[2] += ew * trace.f_z[k];
            e *= step;
        }
        // uniform step h = T/(n-1), so h/T = 1/(n-1)
        let h = 1.0 / (n - 1) as f64;
        line.f_x.push(acc[0] * h);
        line.f_y.push(acc[1] * h);
        line.f_z.push(acc[2] * h);
    }
    line
}

/// Geodesic basis states `|+_0>`, `|-_0>` as columns of a 2x2 matrix.
fn geodesic_frame(axis: GdAxis) -> Operator {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match axis {
        // |+_0> = |1>, |-_0> = |0>
        GdAxis::Y => Operator::from_rows([
            [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        ]),
        // |+_0> = (|0> + |1>)/sqrt2, |-_0> = (|0> - |1>)/sqrt2
        GdAxis::Z => Operator::from_rows([
            [C64::new(s, 0.0), C64::new(s, 0.0)],
            [C64::new(s, 0.0), C64::new(-s, 0.0)],
        ]),
    }
}

/// `|+_phi>` on the chosen geodesic.
pub fn geodesic_state(phi: f64, axis: GdAxis) -> crate::quantum::StateVector {
    let frame = geodesic_frame(axis);
    let plus0 = crate::quantum::StateVector::new(vec![frame.get(0, 0), frame.get(1, 0)]);
    geodesic_rotation(phi, axis).apply(&plus0)
}

/// Rotation carrying `|+-_0>` to `|+-_phi>` along the geodesic.
fn geodesic_rotation(phi: f64, axis: GdAxis) -> Operator {
    let gen = match axis {
        GdAxis::Y => pauli::sigma_y(),
        GdAxis::Z => pauli::sigma_z(),
    };
    expm_hermitian(&gen.scale_real(0.5), phi).expect("Pauli generators are Hermitian")
}

/// `U_c = e^{-i varphi/2}|+_phi><+_0| + e^{i varphi/2}|-_phi><-_0|`.
///
/// Axis y runs through the poles (`|+_phi> = cos(phi/2)|1> + sin(phi/2)|0>`);
/// axis z runs along the equator (`|+_phi> ~ (|0> + e^{-i phi}|1>)/sqrt 2`,
/// the +1 eigenstate of `sigma_phi`).
pub fn ideal_geodesic_unitary(phi: f64, varphi: f64, axis: GdAxis) -> Operator {
    let frame = geodesic_frame(axis);
    let r = geodesic_rotation(phi, axis);
    let e_minus = C64::from_polar(1.0, -varphi / 2.0);
    let e_plus = C64::from_polar(1.0, varphi / 2.0);
    let mut u = Operator::zeros(2);
    for (col, ph) in [(0usize, e_minus), (1, e_plus)] {
        let ket0 = crate::quantum::StateVector::new(vec![frame.get(0, col), frame.get(1, col)]);
        let ket_phi = r.apply(&ket0);
        let proj = Operator::outer(&ket_phi, &ket0);
        u.add_scaled(&proj, ph);
    }
    u
}

/// `|Tr(U U_ideal^dag)| / dim`
pub fn gate_fidelity(u: &Operator, u_ideal: &Operator) -> Result<f64, QuantumError> {
    if u.dim() != u_ideal.dim() {
        return Err(QuantumError::DimensionMismatch {
            left: u.dim(),
            right: u_ideal.dim(),
        });
    }
    let n = u.dim();
    let mut tr = C64::new(0.0, 0.0);
    for r in 0..n {
        for c in 0..n {
            tr += u.get(r, c) * u_ideal.get(r, c).conj();
        }
    }
    Ok(tr.norm() / n as f64)
}

/// `Theta_n` in units of `omega_scan T_scan/(2N)`: `(-1)^(n+1) 2n`.
pub fn theta_closed_form_units(n: usize) -> i64 {
    let sign = if n % 2 == 1 { 1 } else { -1 };
    sign * 2 * n as i64
}

/// `2 sum_{j<=n} (-1)^(j+1) phi_j` in the same units, from the sequence's
/// own pulse axes. Axes are recovered from the Bloch vectors (undoing the
/// second-half sign) and snapped to the integer lattice `2j - 1`.
pub fn theta_bruteforce_units(seq: &PulseSequence) -> Option<Vec<i64>> {
    let p = match seq.params {
        ProtocolParams::Gd(p) if p.axis == GdAxis::Y => p,
        _ => return None,
    };
    let unit = p.omega_scan * p.t_scan / (2 * p.n) as f64;
    let mut out = Vec::with_capacity(p.n);
    let mut acc: i64 = 0;
    for (idx, (_, seg)) in seq.pulses().take(p.n).enumerate() {
        let j = idx + 1;
        let v = seg.bloch_vector();
        let s = if seg.half_flag == HalfFlag::SecondHalf { -1.0 } else { 1.0 };
        let mut phi = (s * v[0]).atan2(s * v[2]);
        // unwrap onto the branch closest to the nominal value
        let nominal = unit * (2 * j - 1) as f64;
        phi += 2.0 * PI * ((nominal - phi) / (2.0 * PI)).round();
        let units = phi / unit;
        let snapped = units.round();
        if (units - snapped).abs() > 1e-6 {
            return None;
        }
        let sign = if j % 2 == 1 { 1 } else { -1 };
        acc += 2 * sign * snapped as i64;
        out.push(acc);
    }
    Some(out)
}

/// Partial sum of the square-wave series `sum 4 sin(k pi/2)/(k pi) cos(k pi t/tau)`.
pub fn xy8_series(t: f64, tau: f64, k_max: usize) -> f64 {
    (1..=k_max)
        .step_by(2)
        .map(|k| {
            let k = k as f64;
            4.0 * (k * PI / 2.0).sin() / (k * PI) * (k * PI * t / tau).cos()
        })
        .sum()
}
