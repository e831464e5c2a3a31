//! Pulse-sequence builders: geodesic driving along a meridian (GD_y) or the
//! equator (GD_z), XY8 and CPMG decoupling, and Knill composite wrapping.
//!
//! A pulse segment is described by its Bloch vector `(rabi cos p, rabi sin p,
//! delta)`, i.e. the control Hamiltonian during the segment is
//! `H = delta sigma_z/2 + rabi (cos p sigma_x + sin p sigma_y)/2`.
//! Delta-mode pulses have zero duration and act as the instantaneous rotation
//! `exp(-i pi n.sigma/2)` about the normalised Bloch vector.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{pauli, Generator, HamiltonianTimeline, Operator, QuantumError, C64};

/// Smallest |sin(phi_j)| accepted for finite GD_y pulses.
pub const MIN_SIN_PHI: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error(
        "degenerate pulse axis at pulse {pulse} (phi = {phi:.6} rad, |sin phi| < {MIN_SIN_PHI}); \
         perturb omega_scan*T_scan so that no phi_j is a multiple of pi"
    )]
    DegenerateAxis { pulse: usize, phi: f64 },
    #[error("pulses overlap near t = {time:.6e} s; pulse width exceeds the available gap")]
    Overlap { time: f64 },
    #[error("knill wrap needs finite-width resonant pulses")]
    KnillUnsupported,
    #[error("knill composite of width {width:.3e} s does not fit around the pulse at {center:.6e} s")]
    KnillGap { center: f64, width: f64 },
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Pulse,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HalfFlag {
    FirstHalf,
    SecondHalf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    pub kind: SegmentKind,
    #[serde(rename = "delta_rad_s")]
    pub delta: f64,
    #[serde(rename = "rabi_rad_s")]
    pub rabi: f64,
    #[serde(rename = "drive_phase_rad")]
    pub drive_phase: f64,
    #[serde(rename = "duration_s")]
    pub duration: f64,
    pub half_flag: HalfFlag,
}

impl PulseSegment {
    pub fn free(duration: f64) -> Self {
        PulseSegment {
            kind: SegmentKind::Free,
            delta: 0.0,
            rabi: 0.0,
            drive_phase: 0.0,
            duration,
            half_flag: HalfFlag::FirstHalf,
        }
    }

    /// `(rabi cos p, rabi sin p, delta)`
    pub fn bloch_vector(&self) -> [f64; 3] {
        let (s, c) = self.drive_phase.sin_cos();
        [self.rabi * c, self.rabi * s, self.delta]
    }

    /// `E = sqrt(delta^2 + rabi^2)`
    pub fn effective_rabi(&self) -> f64 {
        self.delta.hypot(self.rabi)
    }

    /// `int E dt` over the segment (zero for delta pulses).
    pub fn area(&self) -> f64 {
        self.effective_rabi() * self.duration
    }

    pub fn is_delta_pulse(&self) -> bool {
        self.kind == SegmentKind::Pulse && self.duration == 0.0
    }

    /// Control Hamiltonian `v.sigma/2`.
    pub fn hamiltonian(&self) -> Operator {
        pauli::sigma_dot(self.bloch_vector()).scale_real(0.5)
    }

    /// Ideal pi rotation about the segment's axis: `-i n.sigma`.
    pub fn pi_rotation(&self) -> Operator {
        let v = self.bloch_vector();
        let e = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        pauli::sigma_dot([v[0] / e, v[1] / e, v[2] / e]).scale(C64::new(0.0, -1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdAxis {
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseMode {
    Delta,
    Finite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DdFlavor {
    Xy8,
    Cpmg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "GDy")]
    GdY,
    #[serde(rename = "GDz")]
    GdZ,
    #[serde(rename = "XY8")]
    Xy8,
    #[serde(rename = "CPMG")]
    Cpmg,
}

/// Geodesic-driving parameters. Angular quantities in rad/s, times in s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdParams {
    pub n: usize,
    pub omega_scan: f64,
    pub t_scan: f64,
    pub m: usize,
    pub rabi_max: f64,
    pub axis: GdAxis,
    pub pulse_mode: PulseMode,
}

impl GdParams {
    /// `phi_j = omega_scan T_scan (2j - 1)/(2N)` for local index `j = 1..=N`.
    pub fn phi(&self, j: usize) -> f64 {
        self.omega_scan * self.t_scan * (2 * j - 1) as f64 / (2 * self.n) as f64
    }

    /// Pulse centre within a cycle, `T_j = T_scan (2j - 1)/(2N)`.
    pub fn center(&self, j: usize) -> f64 {
        self.t_scan * (2 * j - 1) as f64 / (2 * self.n) as f64
    }

    pub fn t_seq(&self) -> f64 {
        self.t_scan * self.m as f64
    }

    fn validate(&self) -> Result<(), SequenceError> {
        if self.n < 2 {
            return Err(invalid("n", format!("need at least 2 pulses per cycle, got {}", self.n)));
        }
        if self.m < 1 {
            return Err(invalid("m", "need at least one cycle".into()));
        }
        if !(self.t_scan > 0.0) || !self.t_scan.is_finite() {
            return Err(invalid("t_scan", format!("must be positive, got {}", self.t_scan)));
        }
        if !self.omega_scan.is_finite() {
            return Err(invalid("omega_scan", "must be finite".into()));
        }
        if self.pulse_mode == PulseMode::Finite && !(self.rabi_max > 0.0 && self.rabi_max.is_finite()) {
            return Err(invalid("rabi_max", format!("must be positive, got {}", self.rabi_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdParams {
    pub tau: f64,
    pub n_pulses: usize,
    pub rabi: f64,
    pub flavor: DdFlavor,
    #[serde(default)]
    pub knill: bool,
    pub pulse_mode: PulseMode,
}

impl DdParams {
    pub fn t_seq(&self) -> f64 {
        self.tau * self.n_pulses as f64
    }

    /// XY8 phase pattern X-Y-X-Y-Y-X-Y-X; CPMG all X.
    pub fn phase(&self, k: usize) -> f64 {
        match self.flavor {
            DdFlavor::Cpmg => 0.0,
            DdFlavor::Xy8 => {
                const PATTERN: [f64; 8] = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
                PATTERN[k % 8] * PI / 2.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProtocolParams {
    Gd(GdParams),
    Dd(DdParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub protocol: Protocol,
    pub params: ProtocolParams,
    #[serde(rename = "t_seq_s")]
    pub t_seq: f64,
    #[serde(default)]
    pub knill: bool,
    pub segments: Vec<PulseSegment>,
}

/// One pulse (or composite) to place on the timeline.
struct Placement {
    center: f64,
    parts: Vec<PulseSegment>,
}

fn invalid(field: &'static str, reason: String) -> SequenceError {
    SequenceError::InvalidParam { field, reason }
}

fn assemble(placements: Vec<Placement>, t_seq: f64) -> Result<Vec<PulseSegment>, SequenceError> {
    // Relative slack for round-off in centre/width arithmetic.
    let slack = 1e-12 * t_seq.max(1e-300);
    let mut segments = Vec::new();
    let mut cursor = 0.0;
    for p in placements {
        let width: f64 = p.parts.iter().map(|s| s.duration).sum();
        let start = p.center - width / 2.0;
        if start < cursor - slack {
            return Err(SequenceError::Overlap { time: p.center });
        }
        if start > cursor + slack {
            segments.push(PulseSegment::free(start - cursor));
        }
        segments.extend(p.parts);
        cursor = (p.center + width / 2.0).max(cursor);
    }
    if cursor > t_seq + slack {
        return Err(SequenceError::Overlap { time: t_seq });
    }
    if t_seq - cursor > slack {
        segments.push(PulseSegment::free(t_seq - cursor));
    }
    Ok(segments)
}

fn half_flag(j: usize, n: usize) -> HalfFlag {
    if 2 * j > n {
        HalfFlag::SecondHalf
    } else {
        HalfFlag::FirstHalf
    }
}

/// Geodesic driving through the poles: pulse j is a pi rotation about
/// `s (sin phi_j, 0, cos phi_j)` where `s = -1` in the second half of each
/// cycle.
pub fn build_gd_y(p: &GdParams) -> Result<PulseSequence, SequenceError> {
    p.validate()?;
    if p.axis != GdAxis::Y {
        return Err(invalid("axis", "build_gd_y requires axis = y".into()));
    }
    if p.omega_scan == 0.0 {
        return Err(SequenceError::DegenerateAxis { pulse: 1, phi: 0.0 });
    }
    let mut placements = Vec::with_capacity(p.n * p.m);
    for cycle in 0..p.m {
        for j in 1..=p.n {
            let phi = p.phi(j);
            let flag = half_flag(j, p.n);
            let s = if flag == HalfFlag::SecondHalf { -1.0 } else { 1.0 };
            let (sin_phi, cos_phi) = phi.sin_cos();
            let seg = match p.pulse_mode {
                PulseMode::Delta => {
                    let e = if p.rabi_max > 0.0 { p.rabi_max } else { 1.0 };
                    let x = s * sin_phi * e;
                    PulseSegment {
                        kind: SegmentKind::Pulse,
                        delta: s * cos_phi * e,
                        rabi: x.abs(),
                        drive_phase: if x < 0.0 { PI } else { 0.0 },
                        duration: 0.0,
                        half_flag: flag,
                    }
                }
                PulseMode::Finite => {
                    if sin_phi.abs() < MIN_SIN_PHI {
                        return Err(SequenceError::DegenerateAxis {
                            pulse: cycle * p.n + j,
                            phi,
                        });
                    }
                    let e = p.rabi_max / sin_phi.abs();
                    let duration = PI / e;
                    if duration > p.t_scan / p.n as f64 * (1.0 + 1e-12) {
                        return Err(SequenceError::Overlap {
                            time: cycle as f64 * p.t_scan + p.center(j),
                        });
                    }
                    PulseSegment {
                        kind: SegmentKind::Pulse,
                        delta: s * e * cos_phi,
                        rabi: p.rabi_max,
                        drive_phase: if s * sin_phi < 0.0 { PI } else { 0.0 },
                        duration,
                        half_flag: flag,
                    }
                }
            };
            placements.push(Placement {
                center: cycle as f64 * p.t_scan + p.center(j),
                parts: vec![seg],
            });
        }
    }
    let t_seq = p.t_seq();
    Ok(PulseSequence {
        protocol: Protocol::GdY,
        params: ProtocolParams::Gd(*p),
        t_seq,
        knill: false,
        segments: assemble(placements, t_seq)?,
    })
}

/// Geodesic driving along the equator: resonant transverse pi pulses with
/// drive phase `phi_j`, shifted by pi in the second half of each cycle.
pub fn build_gd_z(p: &GdParams) -> Result<PulseSequence, SequenceError> {
    p.validate()?;
    if p.axis != GdAxis::Z {
        return Err(invalid("axis", "build_gd_z requires axis = z".into()));
    }
    if p.pulse_mode == PulseMode::Finite && PI / p.rabi_max > p.t_scan / p.n as f64 * (1.0 + 1e-12) {
        return Err(SequenceError::Overlap { time: p.center(1) });
    }
    let rabi = if p.rabi_max > 0.0 { p.rabi_max } else { 1.0 };
    let duration = match p.pulse_mode {
        PulseMode::Delta => 0.0,
        PulseMode::Finite => PI / rabi,
    };
    let mut placements = Vec::with_capacity(p.n * p.m);
    for cycle in 0..p.m {
        for j in 1..=p.n {
            let flag = half_flag(j, p.n);
            let shift = if flag == HalfFlag::SecondHalf { PI } else { 0.0 };
            placements.push(Placement {
                center: cycle as f64 * p.t_scan + p.center(j),
                parts: vec![PulseSegment {
                    kind: SegmentKind::Pulse,
                    delta: 0.0,
                    rabi,
                    drive_phase: p.phi(j) + shift,
                    duration,
                    half_flag: flag,
                }],
            });
        }
    }
    let t_seq = p.t_seq();
    Ok(PulseSequence {
        protocol: Protocol::GdZ,
        params: ProtocolParams::Gd(*p),
        t_seq,
        knill: false,
        segments: assemble(placements, t_seq)?,
    })
}

/// XY8 or CPMG with pulse centres at `tau/2 + k tau`.
pub fn build_dd(p: &DdParams) -> Result<PulseSequence, SequenceError> {
    if !(p.tau > 0.0) || !p.tau.is_finite() {
        return Err(invalid("tau", format!("must be positive, got {}", p.tau)));
    }
    if p.flavor == DdFlavor::Xy8 && p.n_pulses % 8 != 0 {
        return Err(invalid(
            "n_pulses",
            format!("XY8 needs a multiple of 8 pulses, got {}", p.n_pulses),
        ));
    }
    if p.pulse_mode == PulseMode::Finite {
        if !(p.rabi > 0.0) || !p.rabi.is_finite() {
            return Err(invalid("rabi", format!("must be positive, got {}", p.rabi)));
        }
        if p.tau <= PI / p.rabi {
            return Err(SequenceError::Overlap { time: p.tau / 2.0 });
        }
    }
    let rabi = if p.rabi > 0.0 { p.rabi } else { 1.0 };
    let duration = match p.pulse_mode {
        PulseMode::Delta => 0.0,
        PulseMode::Finite => PI / rabi,
    };
    let placements = (0..p.n_pulses)
        .map(|k| Placement {
            center: p.tau * (k as f64 + 0.5),
            parts: vec![PulseSegment {
                kind: SegmentKind::Pulse,
                delta: 0.0,
                rabi,
                drive_phase: p.phase(k),
                duration,
                half_flag: HalfFlag::FirstHalf,
            }],
        })
        .collect();
    let t_seq = p.t_seq();
    let segments = if p.n_pulses == 0 {
        Vec::new()
    } else {
        assemble(placements, t_seq)?
    };
    let seq = PulseSequence {
        protocol: match p.flavor {
            DdFlavor::Xy8 => Protocol::Xy8,
            DdFlavor::Cpmg => Protocol::Cpmg,
        },
        params: ProtocolParams::Dd(*p),
        t_seq,
        knill: false,
        segments,
    };
    if p.knill {
        knill_wrap(&seq)
    } else {
        Ok(seq)
    }
}

/// Knill phase offsets relative to the original drive phase.
pub const KNILL_PHASES: [f64; 5] = [PI / 6.0, 0.0, PI / 2.0, 0.0, PI / 6.0];

/// Replaces each resonant pi pulse by the five-pulse Knill composite centred
/// on the original pulse.
pub fn knill_wrap(seq: &PulseSequence) -> Result<PulseSequence, SequenceError> {
    let mut placements = Vec::new();
    let mut t = 0.0;
    for seg in &seq.segments {
        if seg.kind == SegmentKind::Pulse {
            if seg.duration == 0.0 || seg.delta != 0.0 {
                return Err(SequenceError::KnillUnsupported);
            }
            let parts: Vec<PulseSegment> = KNILL_PHASES
                .iter()
                .map(|&dp| PulseSegment {
                    drive_phase: seg.drive_phase + dp,
                    ..*seg
                })
                .collect();
            placements.push(Placement {
                center: t + seg.duration / 2.0,
                parts,
            });
        }
        t += seg.duration;
    }
    let centers: Vec<(f64, f64)> = placements
        .iter()
        .map(|p| (p.center, p.parts.iter().map(|s| s.duration).sum()))
        .collect();
    let segments = assemble(placements, seq.t_seq).map_err(|e| match e {
        SequenceError::Overlap { time } => {
            let (center, width) = centers
                .iter()
                .copied()
                .min_by(|a, b| (a.0 - time).abs().total_cmp(&(b.0 - time).abs()))
                .unwrap_or((time, 0.0));
            SequenceError::KnillGap { center, width }
        }
        other => other,
    })?;
    Ok(PulseSequence {
        protocol: seq.protocol,
        params: seq.params,
        t_seq: seq.t_seq,
        knill: true,
        segments,
    })
}

/// Builds the sequence for either parameter family.
pub fn build(params: &ProtocolParams) -> Result<PulseSequence, SequenceError> {
    match params {
        ProtocolParams::Gd(g) => match g.axis {
            GdAxis::Y => build_gd_y(g),
            GdAxis::Z => build_gd_z(g),
        },
        ProtocolParams::Dd(d) => build_dd(d),
    }
}

impl PulseSequence {
    /// Segments paired with their absolute start times.
    pub fn timed_segments(&self) -> impl Iterator<Item = (f64, &PulseSegment)> {
        let mut t = 0.0;
        self.segments.iter().map(move |s| {
            let start = t;
            t += s.duration;
            (start, s)
        })
    }

    pub fn pulses(&self) -> impl Iterator<Item = (f64, &PulseSegment)> {
        self.timed_segments()
            .filter(|(_, s)| s.kind == SegmentKind::Pulse)
    }

    pub fn pulse_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Pulse)
            .count()
    }

    /// Centre times of individual pulse segments.
    pub fn pulse_centers(&self) -> Vec<f64> {
        self.pulses().map(|(t, s)| t + s.duration / 2.0).collect()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn is_delta_mode(&self) -> bool {
        self.segments.iter().any(|s| s.is_delta_pulse())
    }

    /// Shortest finite pulse duration, if any.
    pub fn shortest_pulse(&self) -> Option<f64> {
        self.pulses()
            .map(|(_, s)| s.duration)
            .filter(|&d| d > 0.0)
            .min_by(f64::total_cmp)
    }

    /// Control-only qubit timeline (no signal, no errors).
    pub fn control_timeline(&self) -> Result<HamiltonianTimeline, SequenceError> {
        let mut tl = HamiltonianTimeline::new(2, 0.0);
        for seg in &self.segments {
            if seg.is_delta_pulse() {
                tl.push_kick(seg.pi_rotation())?;
            } else if seg.duration > 0.0 {
                tl.push_segment(seg.duration, Generator::Constant(seg.hamiltonian()))?;
            }
        }
        Ok(tl)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}
