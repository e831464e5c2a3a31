//! Scenario runners: spectroscopy sweeps, heterodyne sweeps and fidelity
//! maps, with Monte Carlo averaging over seeded noise realizations.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::gate_fidelity;
use crate::environment::{
    derive_seed, AcField, ControlErrorModel, EnvironmentError, NoisePath, NuclearBath, NuclearSpin,
    OuProcess,
};
use crate::quantum::{
    expm_hermitian_eig, pauli, propagate, Generator, HamiltonianTimeline, Operator, QuantumError,
    StateVector, C64,
};
use crate::sequences::{
    build, knill_wrap, PulseSegment, PulseSequence, ProtocolParams, SegmentKind, SequenceError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::InvalidParam {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutBasis {
    PlusX,
    PlusY,
    Zero,
}

impl ReadoutBasis {
    pub fn state(&self) -> StateVector {
        match self {
            ReadoutBasis::PlusX => StateVector::plus_x(),
            ReadoutBasis::PlusY => StateVector::plus_y(),
            ReadoutBasis::Zero => StateVector::ket0(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    PlusX,
    PlusY,
    Zero,
    One,
}

impl InitialState {
    pub fn state(&self) -> StateVector {
        match self {
            InitialState::PlusX => StateVector::plus_x(),
            InitialState::PlusY => StateVector::plus_y(),
            InitialState::Zero => StateVector::ket0(),
            InitialState::One => StateVector::ket1(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    Tau,
    OmegaScan,
    DeltaScan,
}

/// How the signal couples to the qubit.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    /// `H = (B(t) + dB(t) + Delta) sigma_z/2 + H_c(t)`
    Longitudinal,
    /// Frame rotating at the drive frequency `omega_q + delta_scan`. Tone
    /// frequencies are detunings `nu_j - omega_q`; only the slow transverse
    /// term is kept unless `omega_q` is given, which adds the terms
    /// oscillating near `2 omega_q`.
    Heterodyne { delta_scan: f64, omega_q: Option<f64> },
    /// Qubit plus up to three nuclei, simulated in the lab frame.
    NuclearBath(Vec<NuclearSpin>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub field: AcField,
    /// Dephasing `dB(t) sigma_z/2`.
    pub dephasing: Option<OuProcess>,
    pub scenario: Scenario,
}

impl Environment {
    pub fn quiet() -> Self {
        Environment {
            field: AcField::empty(),
            dephasing: None,
            scenario: Scenario::Longitudinal,
        }
    }

    pub fn longitudinal(field: AcField) -> Self {
        Environment {
            field,
            dephasing: None,
            scenario: Scenario::Longitudinal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub protocol: ProtocolParams,
    /// Replace every resonant pulse by a Knill composite.
    pub knill: bool,
    pub variable: SweepVariable,
    /// Canonical units: seconds for `tau`, rad/s otherwise.
    pub grid: Vec<f64>,
    /// Keep `omega_scan T_scan = 2 pi` at every `omega_scan` point.
    pub cyclic_scan: bool,
    /// For `tau` sweeps: use the largest even pulse count with `N tau <= cap`.
    pub dd_time_cap: Option<f64>,
    pub environment: Environment,
    pub errors: ControlErrorModel,
    pub n_mc: usize,
    pub initial_state: InitialState,
    pub readout: ReadoutBasis,
    pub master_seed: u64,
    /// Overrides the automatic step rule for every segment.
    pub dt_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub master_seed: u64,
    pub n_mc: usize,
    pub realizations_per_point: usize,
    pub stochastic: bool,
    pub variable: SweepVariable,
    pub dt_max_s: Option<f64>,
    pub seed_rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub x: Vec<f64>,
    pub signal: Vec<f64>,
    pub stderr: Vec<f64>,
    pub meta: SweepMeta,
}

/// `2 pi / (50 omega)`: 50 steps per period of the fastest frequency.
pub fn step_rule(omega: f64) -> Option<f64> {
    if omega > 0.0 && omega.is_finite() {
        Some(2.0 * PI / (50.0 * omega))
    } else {
        None
    }
}

/// Noise is held piecewise constant on cells of `tau_c / NOISE_CELLS_PER_TAU`.
pub const NOISE_CELLS_PER_TAU: f64 = 1e4;

fn noise_cell(p: &OuProcess, duration: f64) -> f64 {
    // cap the number of cells for very long sequences
    (p.tau_c / NOISE_CELLS_PER_TAU).max(duration / 1e6)
}

/// One draw of the stochastic processes over a time window.
#[derive(Debug, Clone)]
pub struct Realization {
    pub dephasing: Arc<NoisePath>,
    pub eta: Arc<NoisePath>,
}

impl Realization {
    pub fn quiet() -> Self {
        Realization {
            dephasing: Arc::new(NoisePath::zero()),
            eta: Arc::new(NoisePath::zero()),
        }
    }

    pub fn draw(env: &Environment, errors: &ControlErrorModel, seed: u64, t0: f64, duration: f64) -> Self {
        let sample = |p: &OuProcess, stream: u64| {
            let p = p.with_seed(derive_seed(seed, stream, 0));
            Arc::new(NoisePath::sample(&p, t0, duration, noise_cell(&p, duration)))
        };
        Realization {
            dephasing: env
                .dephasing
                .as_ref()
                .filter(|p| p.sigma > 0.0)
                .map(|p| sample(p, 1))
                .unwrap_or_else(|| Arc::new(NoisePath::zero())),
            eta: errors
                .eta
                .as_ref()
                .filter(|p| p.sigma > 0.0)
                .map(|p| sample(p, 2))
                .unwrap_or_else(|| Arc::new(NoisePath::zero())),
        }
    }
}

fn is_stochastic(env: &Environment, errors: &ControlErrorModel) -> bool {
    env.dephasing.map_or(false, |p| p.sigma > 0.0) || errors.eta.map_or(false, |p| p.sigma > 0.0)
}

/// Nominal Rabi frequency of a protocol.
pub fn nominal_rabi(params: &ProtocolParams) -> f64 {
    match params {
        ProtocolParams::Gd(g) => g.rabi_max,
        ProtocolParams::Dd(d) => d.rabi,
    }
}

/// Builds a sequence, optionally Knill-wrapped.
pub fn build_sequence(params: &ProtocolParams, knill: bool) -> Result<PulseSequence, SequenceError> {
    let seq = build(params)?;
    if knill && !seq.knill {
        knill_wrap(&seq)
    } else {
        Ok(seq)
    }
}

/// A single fully specified simulation: sequence, environment and errors.
#[derive(Debug, Clone)]
pub struct PointModel {
    pub sequence: PulseSequence,
    pub environment: Environment,
    pub errors: ControlErrorModel,
    pub initial_state: InitialState,
    pub readout: ReadoutBasis,
    pub dt_max: Option<f64>,
    bath: Option<NuclearBath>,
}

impl PointModel {
    pub fn new(
        sequence: PulseSequence,
        environment: Environment,
        errors: ControlErrorModel,
        initial_state: InitialState,
        readout: ReadoutBasis,
        dt_max: Option<f64>,
    ) -> Result<Self, ExperimentError> {
        errors.validate()?;
        if let Some(d) = dt_max {
            if !(d > 0.0) || !d.is_finite() {
                return Err(invalid("dt_max", format!("must be positive, got {d}")));
            }
        }
        let bath = match &environment.scenario {
            Scenario::NuclearBath(spins) => {
                if !environment.field.is_silent() || is_stochastic(&environment, &errors) {
                    return Err(invalid(
                        "environment",
                        "the nuclear-bath scenario supports static control errors only",
                    ));
                }
                Some(crate::environment::build_nuclear_bath(spins)?.0)
            }
            _ => None,
        };
        Ok(PointModel {
            sequence,
            environment,
            errors,
            initial_state,
            readout,
            dt_max,
            bath,
        })
    }

    pub fn is_stochastic(&self) -> bool {
        is_stochastic(&self.environment, &self.errors)
    }

    /// Fastest environment frequency seen during free evolution.
    fn env_frequency(&self) -> f64 {
        let stat = self.errors.delta_static.abs();
        match &self.environment.scenario {
            Scenario::Longitudinal => self.environment.field.max_frequency().max(stat),
            Scenario::Heterodyne { delta_scan, omega_q } => {
                let mut w = (self.errors.delta_static - delta_scan).abs();
                for t in self.environment.field.tones() {
                    if t.b != 0.0 {
                        w = w.max((delta_scan - t.nu).abs());
                        if let Some(wq) = omega_q {
                            w = w.max((2.0 * wq + delta_scan + t.nu).abs());
                        }
                    }
                }
                w
            }
            Scenario::NuclearBath(_) => stat,
        }
    }

    fn steps(&self) -> (f64, Option<f64>) {
        if let Some(d) = self.dt_max {
            return (d, None);
        }
        let env = self.env_frequency();
        let mut ctrl = nominal_rabi(&self.sequence.params) * (1.0 + self.errors.epsilon).abs();
        if let Scenario::Heterodyne { delta_scan, omega_q: Some(wq) } = self.environment.scenario {
            ctrl = ctrl.max(2.0 * (wq + delta_scan).abs());
        }
        let pulse = step_rule(ctrl.max(env)).unwrap_or(f64::INFINITY);
        (pulse, step_rule(env))
    }

    /// Qubit timeline starting at absolute time `t0`.
    pub fn timeline(&self, t0: f64, noise: &Realization) -> Result<HamiltonianTimeline, ExperimentError> {
        if self.bath.is_some() {
            return Err(invalid("scenario", "nuclear-bath runs use the lab-frame propagator"));
        }
        let (pulse_step, free_step) = self.steps();
        let field = Arc::new(self.environment.field.clone());
        let quiet_field = self.environment.field.is_silent();
        let db = noise.dephasing.clone();
        let eta = noise.eta.clone();
        let has_db = db.values().iter().any(|&v| v != 0.0);
        let has_eta = eta.values().iter().any(|&v| v != 0.0);
        let gain = 1.0 + self.errors.epsilon;
        let half_z = pauli::sigma_z().scale_real(0.5);
        let mut tl = HamiltonianTimeline::new(2, t0);
        for seg in &self.sequence.segments {
            if seg.is_delta_pulse() {
                tl.push_kick(seg.pi_rotation())?;
                continue;
            }
            let is_pulse = seg.kind == SegmentKind::Pulse;
            let drive = if is_pulse {
                let scaled = PulseSegment {
                    rabi: seg.rabi * gain,
                    delta: 0.0,
                    ..*seg
                };
                scaled.hamiltonian()
            } else {
                Operator::zeros(2)
            };
            let gen = match &self.environment.scenario {
                Scenario::Longitudinal => {
                    let mut fixed = drive.clone();
                    fixed.add_scaled(&half_z, C64::new(seg.delta + self.errors.delta_static, 0.0));
                    if quiet_field && !has_db && !(is_pulse && has_eta) {
                        Generator::Constant(fixed)
                    } else if !is_pulse {
                        let (f, d) = (field.clone(), db.clone());
                        Generator::Commuting {
                            fixed,
                            modulated: half_z.clone(),
                            integral: Arc::new(move |a, b| f.integral(a, b) + d.integral(a, b)),
                        }
                    } else {
                        let (f, d, e) = (field.clone(), db.clone(), eta.clone());
                        let drive = drive.clone();
                        let dz = seg.delta + self.errors.delta_static;
                        Generator::TimeDependent {
                            dim: 2,
                            eval: Arc::new(move |t, h| {
                                let k = 1.0 + e.value(t);
                                let z = 0.5 * (dz + f.eval(t) + d.value(t));
                                let dv = drive.entries();
                                let dst = h.entries_mut();
                                dst[0] = C64::new(-z, 0.0);
                                dst[3] = C64::new(z, 0.0);
                                dst[1] = dv[1] * k;
                                dst[2] = dv[2] * k;
                            }),
                        }
                    }
                }
                Scenario::Heterodyne { delta_scan, omega_q } => {
                    let mut fixed = drive.clone();
                    fixed.add_scaled(
                        &half_z,
                        C64::new(seg.delta + self.errors.delta_static - delta_scan, 0.0),
                    );
                    let cr_drive = match (omega_q, is_pulse) {
                        (Some(wq), true) => Some((2.0 * (wq + delta_scan), seg.rabi * gain, seg.drive_phase)),
                        _ => None,
                    };
                    if quiet_field && !has_db && !(is_pulse && has_eta) && cr_drive.is_none() {
                        Generator::Constant(fixed)
                    } else if quiet_field && !is_pulse {
                        let d = db.clone();
                        Generator::Commuting {
                            fixed,
                            modulated: half_z.clone(),
                            integral: Arc::new(move |a, b| d.integral(a, b)),
                        }
                    } else {
                        let (f, d, e) = (field.clone(), db.clone(), eta.clone());
                        let (ds, wq) = (*delta_scan, *omega_q);
                        let base = fixed.clone();
                        let drive = drive.clone();
                        Generator::TimeDependent {
                            dim: 2,
                            eval: Arc::new(move |t, h| {
                                let k = e.value(t);
                                let z = 0.5 * d.value(t);
                                let mut c = C64::new(0.0, 0.0);
                                for tone in f.tones() {
                                    let q = tone.b / 4.0;
                                    c += C64::from_polar(q, tone.alpha - tone.theta + (ds - tone.nu) * t);
                                    if let Some(wq) = wq {
                                        c += C64::from_polar(
                                            q,
                                            tone.alpha + tone.theta + (2.0 * wq + ds + tone.nu) * t,
                                        );
                                    }
                                }
                                if let Some((w, rabi, p)) = cr_drive {
                                    c += C64::from_polar(rabi / 2.0, w * t + p) * (1.0 + k);
                                }
                                let src = base.entries();
                                let dv = drive.entries();
                                let dst = h.entries_mut();
                                // sigma_+ = |1><0| sits at (1, 0)
                                dst[0] = src[0] - z;
                                dst[3] = src[3] + z;
                                dst[1] = src[1] + dv[1] * k + c.conj();
                                dst[2] = src[2] + dv[2] * k + c;
                            }),
                        }
                    }
                }
                Scenario::NuclearBath(_) => unreachable!(),
            };
            let step = match (&gen, is_pulse) {
                (Generator::TimeDependent { .. }, false) => free_step.or(Some(pulse_step)),
                _ => Some(pulse_step),
            };
            let step = step.filter(|s| s.is_finite());
            tl.push_segment_with_step(seg.duration, gen, step)?;
        }
        Ok(tl)
    }

    fn global_step(&self) -> f64 {
        let (p, _) = self.steps();
        if p.is_finite() {
            p
        } else {
            self.sequence.t_seq.max(1e-12)
        }
    }

    /// Qubit propagator for one realization.
    pub fn unitary(&self, t0: f64, noise: &Realization) -> Result<Operator, ExperimentError> {
        if let Some(bath) = &self.bath {
            return Ok(self.lab_frame_unitary(bath)?);
        }
        let tl = self.timeline(t0, noise)?;
        Ok(propagate(&tl, self.global_step())?)
    }

    /// Readout population for one realization starting at `t0`.
    pub fn population(&self, t0: f64, noise: &Realization) -> Result<f64, ExperimentError> {
        let u = self.unitary(t0, noise)?;
        let psi = self.initial_state.state();
        let r = self.readout.state();
        Ok(match &self.bath {
            None => r.overlap(&u.apply(&psi)),
            Some(bath) => {
                let d = bath.nuclear_dim();
                let mut p = 0.0;
                for b in 0..d {
                    let out = u.apply(&psi.tensor(&StateVector::basis(d, b)));
                    for b2 in 0..d {
                        p += r.tensor(&StateVector::basis(d, b2)).overlap(&out);
                    }
                }
                p / d as f64
            }
        }
        .clamp(0.0, 1.0))
    }

    fn lab_frame_unitary(&self, bath: &NuclearBath) -> Result<Operator, QuantumError> {
        let h_bath = bath.lab_hamiltonian();
        let dim = bath.dim();
        let gain = 1.0 + self.errors.epsilon;
        let mut cache: HashMap<[u64; 4], Operator> = HashMap::new();
        let mut acc = Operator::identity(dim);
        let mut tmp = Operator::zeros(dim);
        for seg in &self.sequence.segments {
            let u = if seg.is_delta_pulse() {
                bath.lift(&seg.pi_rotation())
            } else {
                let key = [
                    seg.delta.to_bits(),
                    seg.rabi.to_bits(),
                    seg.drive_phase.to_bits(),
                    seg.duration.to_bits(),
                ];
                if let Some(u) = cache.get(&key) {
                    u.clone()
                } else {
                    let mut q = if seg.kind == SegmentKind::Pulse {
                        PulseSegment {
                            rabi: seg.rabi * gain,
                            ..*seg
                        }
                        .hamiltonian()
                    } else {
                        Operator::zeros(2)
                    };
                    q.add_scaled(
                        &pauli::sigma_z(),
                        C64::new(0.5 * self.errors.delta_static, 0.0),
                    );
                    let mut h = h_bath.clone();
                    h.add_scaled(&bath.lift(&q), C64::new(1.0, 0.0));
                    let u = expm_hermitian_eig(&h, seg.duration)?;
                    cache.insert(key, u.clone());
                    u
                }
            };
            u.matmul_into(&acc, &mut tmp);
            std::mem::swap(&mut acc, &mut tmp);
        }
        Ok(acc)
    }
}

/// Largest even pulse count with `n tau <= cap`.
pub fn capped_pulse_count(tau: f64, cap: f64) -> usize {
    let n = ((cap / tau) * (1.0 + 1e-12)).floor() as usize;
    n - n % 2
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.grid.is_empty() {
            return Err(invalid("grid", "sweep grid is empty"));
        }
        let inc = self.grid.windows(2).all(|w| w[1] > w[0]);
        let dec = self.grid.windows(2).all(|w| w[1] < w[0]);
        if !(inc || dec) || self.grid.iter().any(|x| !x.is_finite()) {
            return Err(invalid("grid", "sweep grid must be finite and strictly monotonic"));
        }
        if self.n_mc < 1 {
            return Err(invalid("n_mc", "need at least one realization"));
        }
        match (self.variable, &self.protocol) {
            (SweepVariable::Tau, ProtocolParams::Dd(_)) => {}
            (SweepVariable::Tau, _) => return Err(invalid("variable", "tau sweeps need a DD protocol")),
            (SweepVariable::OmegaScan, ProtocolParams::Gd(_)) => {}
            (SweepVariable::OmegaScan, _) => {
                return Err(invalid("variable", "omega_scan sweeps need a GD protocol"))
            }
            (SweepVariable::DeltaScan, _) => {
                if !matches!(self.environment.scenario, Scenario::Heterodyne { .. }) {
                    return Err(invalid("variable", "delta_scan sweeps need the heterodyne scenario"));
                }
            }
        }
        self.errors.validate()?;
        Ok(())
    }

    /// The model at grid point `i`.
    pub fn point(&self, i: usize) -> Result<PointModel, ExperimentError> {
        let x = self.grid[i];
        let mut params = self.protocol;
        let mut env = self.environment.clone();
        match (self.variable, &mut params) {
            (SweepVariable::Tau, ProtocolParams::Dd(d)) => {
                d.tau = x;
                if let Some(cap) = self.dd_time_cap {
                    d.n_pulses = capped_pulse_count(x, cap);
                    if d.n_pulses == 0 {
                        return Err(invalid("tau", format!("tau = {x} s leaves no pulses under the time cap")));
                    }
                }
            }
            (SweepVariable::OmegaScan, ProtocolParams::Gd(g)) => {
                g.omega_scan = x;
                if self.cyclic_scan {
                    if x == 0.0 {
                        return Err(SequenceError::DegenerateAxis { pulse: 1, phi: 0.0 }.into());
                    }
                    g.t_scan = 2.0 * PI / x.abs();
                }
            }
            (SweepVariable::DeltaScan, _) => {
                if let Scenario::Heterodyne { delta_scan, .. } = &mut env.scenario {
                    *delta_scan = x;
                }
            }
            _ => return Err(invalid("variable", "swept variable does not match the protocol")),
        }
        let seq = build_sequence(&params, self.knill)?;
        PointModel::new(seq, env, self.errors, self.initial_state, self.readout, self.dt_max)
    }
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every grid point and realization. Results do not depend on the
/// rayon pool size.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, ExperimentError> {
    spec.validate()?;
    let models: Vec<PointModel> = (0..spec.grid.len())
        .map(|i| spec.point(i))
        .collect::<Result<_, _>>()?;
    let stochastic = is_stochastic(&spec.environment, &spec.errors);
    let reals = if stochastic { spec.n_mc } else { 1 };
    let work: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|i| (0..reals).map(move |r| (i, r)))
        .collect();
    let pops: Vec<f64> = work
        .par_iter()
        .map(|&(i, r)| {
            let m = &models[i];
            let noise = if stochastic {
                let seed = derive_seed(spec.master_seed, i as u64, r as u64);
                Realization::draw(&m.environment, &m.errors, seed, 0.0, m.sequence.t_seq)
            } else {
                Realization::quiet()
            };
            m.population(0.0, &noise)
        })
        .collect::<Result<_, _>>()?;
    let mut signal = Vec::with_capacity(models.len());
    let mut stderr = Vec::with_capacity(models.len());
    for chunk in pops.chunks(reals) {
        let (m, s) = mean_stderr(chunk);
        signal.push(m.clamp(0.0, 1.0));
        stderr.push(s);
    }
    Ok(SweepResult {
        x: spec.grid.clone(),
        signal,
        stderr,
        meta: SweepMeta {
            master_seed: spec.master_seed,
            n_mc: spec.n_mc,
            realizations_per_point: reals,
            stochastic,
            variable: spec.variable,
            dt_max_s: spec.dt_max,
            seed_rule: "splitmix64(master, grid_index, realization_index)".into(),
        },
    })
}

/// `P = cos^2[(b/4) cos(theta - alpha) T]`
pub fn resonant_population_check(b: f64, theta: f64, alpha: f64, t: f64) -> f64 {
    (b / 4.0 * (theta - alpha).cos() * t).cos().powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityMap {
    pub delta_over_omega: Vec<f64>,
    pub epsilon: Vec<f64>,
    /// `fidelity[i][j]` at `delta_over_omega[i]`, `epsilon[j]`.
    pub fidelity: Vec<Vec<f64>>,
}

impl FidelityMap {
    pub fn mean(&self) -> f64 {
        let n: usize = self.fidelity.iter().map(|r| r.len()).sum();
        self.fidelity.iter().flatten().sum::<f64>() / n as f64
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.fidelity[i][j]
    }
}

/// Static-error propagator of a qubit sequence: Rabi scaled by `1 + eps`,
/// extra detuning `delta` during the whole sequence.
pub fn static_error_unitary(seq: &PulseSequence, delta: f64, epsilon: f64) -> Operator {
    let mut tl = HamiltonianTimeline::new(2, 0.0);
    let half_z = pauli::sigma_z().scale_real(0.5);
    for seg in &seq.segments {
        if seg.is_delta_pulse() {
            tl.push_kick(seg.pi_rotation()).expect("qubit kick");
            continue;
        }
        let mut h = if seg.kind == SegmentKind::Pulse {
            PulseSegment {
                rabi: seg.rabi * (1.0 + epsilon),
                ..*seg
            }
            .hamiltonian()
        } else {
            Operator::zeros(2)
        };
        h.add_scaled(&half_z, C64::new(delta, 0.0));
        tl.push_segment(seg.duration, Generator::Constant(h))
            .expect("segments have positive duration");
    }
    propagate(&tl, seq.t_seq.max(1e-12)).expect("constant segments")
}

/// Gate fidelity against the identity over a grid of static errors.
/// `delta_grid` is in units of the nominal Rabi frequency.
pub fn fidelity_map(
    params: &ProtocolParams,
    knill: bool,
    delta_grid: &[f64],
    epsilon_grid: &[f64],
) -> Result<FidelityMap, ExperimentError> {
    if delta_grid.is_empty() || epsilon_grid.is_empty() {
        return Err(invalid("grid", "fidelity grids must be nonempty"));
    }
    if epsilon_grid.iter().any(|&e| !(1.0 + e > 0.0)) {
        return Err(invalid("epsilon", "1 + epsilon must be positive"));
    }
    let seq = build_sequence(params, knill)?;
    let omega = nominal_rabi(params);
    let id = Operator::identity(2);
    let fidelity: Vec<Vec<f64>> = delta_grid
        .par_iter()
        .map(|&d| {
            epsilon_grid
                .iter()
                .map(|&e| {
                    let u = static_error_unitary(&seq, d * omega, e);
                    gate_fidelity(&u, &id).expect("qubit dims").min(1.0)
                })
                .collect()
        })
        .collect();
    Ok(FidelityMap {
        delta_over_omega: delta_grid.to_vec(),
        epsilon: epsilon_grid.to_vec(),
        fidelity,
    })
}
