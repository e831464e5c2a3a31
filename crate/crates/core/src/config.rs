//! JSON run configurations. Every physical field carries its unit in the
//! name: `_hz` is a cyclic frequency (multiplied by 2 pi internally),
//! `_s` seconds, `_rad` radians, `_gauss` gauss. The conversions produce the
//! canonical rad/s and seconds used by the engine.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{AcField, ControlErrorModel, EnvironmentError, NuclearSpin, OuProcess, Tone};
use crate::experiments::{
    build_sequence, Environment, ExperimentError, InitialState, PointModel, ReadoutBasis, Scenario,
    SweepSpec, SweepVariable,
};
use crate::qdyne::{QdyneSpec, PHOTONS_PER_N};
use crate::sequences::{
    DdFlavor, DdParams, GdAxis, GdParams, ProtocolParams, PulseMode, PulseSequence, SequenceError,
};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    /// A well-formed config the model cannot run, e.g. a degenerate pulse axis.
    #[error(transparent)]
    Model(ExperimentError),
}

fn bad(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl From<ExperimentError> for ConfigError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidParam { field, reason } => bad(field, reason),
            ExperimentError::Environment(EnvironmentError::InvalidParam { field, reason }) => bad(field, reason),
            ExperimentError::Sequence(SequenceError::InvalidParam { field, reason }) => bad(field, reason),
            other => ConfigError::Model(other),
        }
    }
}

impl From<EnvironmentError> for ConfigError {
    fn from(e: EnvironmentError) -> Self {
        ExperimentError::from(e).into()
    }
}

/// Desk scale uses the reduced Monte Carlo counts and grids of a preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scale {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linspace {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Linspace {
    pub fn values(&self) -> Vec<f64> {
        match self.points {
            0 => vec![],
            1 => vec![self.start],
            n => (0..n)
                .map(|k| self.start + (self.stop - self.start) * k as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

fn default_pulse_mode() -> PulseMode {
    PulseMode::Finite
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdConfig {
    pub n: usize,
    pub m: usize,
    pub omega_scan_hz: f64,
    /// Defaults to one scan period `1/|omega_scan_hz|`.
    #[serde(default)]
    pub t_scan_s: Option<f64>,
    pub rabi_hz: f64,
    #[serde(default = "default_pulse_mode")]
    pub pulse_mode: PulseMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdConfig {
    pub tau_s: f64,
    pub n_pulses: usize,
    pub rabi_hz: f64,
    #[serde(default = "default_pulse_mode")]
    pub pulse_mode: PulseMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolConfig {
    GdY(GdConfig),
    GdZ(GdConfig),
    Xy8(DdConfig),
    Cpmg(DdConfig),
}

impl ProtocolConfig {
    pub fn params(&self) -> Result<ProtocolParams, ConfigError> {
        let gd = |g: &GdConfig, axis| {
            let t_scan = match g.t_scan_s {
                Some(t) => t,
                None if g.omega_scan_hz != 0.0 => 1.0 / g.omega_scan_hz.abs(),
                None => return Err(bad("t_scan_s", "required when omega_scan_hz is 0")),
            };
            Ok(ProtocolParams::Gd(GdParams {
                n: g.n,
                omega_scan: TWO_PI * g.omega_scan_hz,
                t_scan,
                m: g.m,
                rabi_max: TWO_PI * g.rabi_hz,
                axis,
                pulse_mode: g.pulse_mode,
            }))
        };
        let dd = |d: &DdConfig, flavor| {
            ProtocolParams::Dd(DdParams {
                tau: d.tau_s,
                n_pulses: d.n_pulses,
                rabi: TWO_PI * d.rabi_hz,
                flavor,
                knill: false,
                pulse_mode: d.pulse_mode,
            })
        };
        match self {
            ProtocolConfig::GdY(g) => gd(g, GdAxis::Y),
            ProtocolConfig::GdZ(g) => gd(g, GdAxis::Z),
            ProtocolConfig::Xy8(d) => Ok(dd(d, DdFlavor::Xy8)),
            ProtocolConfig::Cpmg(d) => Ok(dd(d, DdFlavor::Cpmg)),
        }
    }

    pub fn sequence(&self, knill: bool) -> Result<PulseSequence, ConfigError> {
        build_sequence(&self.params()?, knill).map_err(|e| ExperimentError::from(e).into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneConfig {
    pub b_hz: f64,
    /// Tone frequency; in the heterodyne scenario the detuning from the
    /// qubit frequency.
    pub nu_hz: f64,
    #[serde(default)]
    pub theta_rad: f64,
    #[serde(default)]
    pub alpha_rad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DephasingConfig {
    pub tau_c_s: f64,
    pub sigma_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "species", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpinConfig {
    Proton,
    Carbon13,
    Custom {
        gamma_hz_per_gauss: f64,
        a_hz: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioConfig {
    #[default]
    Longitudinal,
    Heterodyne {
        #[serde(default)]
        delta_scan_hz: f64,
        /// Qubit frequency; when set, the terms oscillating near twice this
        /// frequency are simulated too.
        #[serde(default)]
        omega_q_hz: Option<f64>,
    },
    NuclearBath { b_z_gauss: f64, spins: Vec<SpinConfig> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(default)]
    pub tones: Vec<ToneConfig>,
    /// Replaces every `theta_rad` and `alpha_rad` by uniform draws.
    #[serde(default)]
    pub random_phase_seed: Option<u64>,
    /// Tone indices kept at desk scale; all tones are used at full scale.
    #[serde(default)]
    pub desk_tones: Option<Vec<usize>>,
    #[serde(default)]
    pub dephasing: Option<DephasingConfig>,
    #[serde(default)]
    pub scenario: ScenarioConfig,
}

impl EnvironmentConfig {
    pub fn field(&self, scale: Scale) -> Result<AcField, ConfigError> {
        let tones: Vec<Tone> = self
            .tones
            .iter()
            .map(|t| Tone {
                b: TWO_PI * t.b_hz,
                nu: TWO_PI * t.nu_hz,
                theta: t.theta_rad,
                alpha: t.alpha_rad,
            })
            .collect();
        // phases are drawn in table order so the desk subset sees the same values
        let field = match self.random_phase_seed {
            Some(seed) => with_random_phases_in_order(&tones, seed)?,
            None => tones,
        };
        let picked = match (&self.desk_tones, scale) {
            (Some(idx), Scale::Desk) => idx
                .iter()
                .map(|&i| {
                    field
                        .get(i)
                        .copied()
                        .ok_or_else(|| bad("desk_tones", format!("index {i} out of range")))
                })
                .collect::<Result<Vec<_>, _>>()?,
            _ => field,
        };
        Ok(AcField::new(picked)?)
    }

    pub fn build(&self, scale: Scale) -> Result<Environment, ConfigError> {
        let dephasing = match &self.dephasing {
            Some(d) => Some(OuProcess::new(d.tau_c_s, TWO_PI * d.sigma_hz, 0)?),
            None => None,
        };
        let scenario = match &self.scenario {
            ScenarioConfig::Longitudinal => Scenario::Longitudinal,
            ScenarioConfig::Heterodyne { delta_scan_hz, omega_q_hz } => Scenario::Heterodyne {
                delta_scan: TWO_PI * delta_scan_hz,
                omega_q: omega_q_hz.map(|w| TWO_PI * w),
            },
            ScenarioConfig::NuclearBath { b_z_gauss, spins } => Scenario::NuclearBath(
                spins
                    .iter()
                    .map(|s| match s {
                        SpinConfig::Proton => Ok(NuclearSpin::proton(*b_z_gauss)),
                        SpinConfig::Carbon13 => Ok(NuclearSpin::carbon13(*b_z_gauss)),
                        SpinConfig::Custom { gamma_hz_per_gauss, a_hz } => NuclearSpin::new(
                            TWO_PI * gamma_hz_per_gauss,
                            [TWO_PI * a_hz[0], TWO_PI * a_hz[1], TWO_PI * a_hz[2]],
                            *b_z_gauss,
                        ),
                    })
                    .collect::<Result<_, _>>()?,
            ),
        };
        Ok(Environment {
            field: self.field(scale)?,
            dephasing,
            scenario,
        })
    }
}

fn with_random_phases_in_order(tones: &[Tone], seed: u64) -> Result<Vec<Tone>, ConfigError> {
    // AcField sorts by frequency; map the drawn phases back to table order
    let field = AcField::new(tones.to_vec())?.with_random_phases(seed);
    let mut sorted: Vec<usize> = (0..tones.len()).collect();
    sorted.sort_by(|&a, &b| tones[a].nu.total_cmp(&tones[b].nu));
    let mut out = tones.to_vec();
    for (k, &i) in sorted.iter().enumerate() {
        out[i] = field.tones()[k];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaConfig {
    pub tau_c_s: f64,
    /// Relative amplitude fluctuation, dimensionless.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorsConfig {
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub eta: Option<EtaConfig>,
    #[serde(default)]
    pub delta_static_hz: f64,
}

impl ErrorsConfig {
    pub fn build(&self) -> Result<ControlErrorModel, ConfigError> {
        let eta = match &self.eta {
            Some(e) => Some(OuProcess::new(e.tau_c_s, e.sigma, 0)?),
            None => None,
        };
        let m = ControlErrorModel {
            epsilon: self.epsilon,
            eta,
            delta_static: TWO_PI * self.delta_static_hz,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Sweep grids. The key names the unit; `linear_resonance_hz` samples
/// `1/(2 tau)` uniformly for pulse-interval sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GridConfig {
    LinearHz(Linspace),
    LinearS(Linspace),
    LinearResonanceHz(Linspace),
    ValuesHz(Vec<f64>),
    ValuesS(Vec<f64>),
}

impl GridConfig {
    /// Canonical values for `variable`: seconds for `tau`, rad/s otherwise.
    pub fn values(&self, variable: SweepVariable) -> Result<Vec<f64>, ConfigError> {
        let is_tau = variable == SweepVariable::Tau;
        let v = match (self, is_tau) {
            (GridConfig::LinearS(l), true) => l.values(),
            (GridConfig::ValuesS(v), true) => v.clone(),
            (GridConfig::LinearResonanceHz(l), true) => {
                l.values().iter().map(|f| 1.0 / (2.0 * f)).collect()
            }
            (GridConfig::LinearHz(l), false) => l.values().iter().map(|f| TWO_PI * f).collect(),
            (GridConfig::ValuesHz(v), false) => v.iter().map(|f| TWO_PI * f).collect(),
            _ => {
                return Err(bad(
                    "grid",
                    format!("grid units do not match the swept variable {variable:?}"),
                ))
            }
        };
        if v.is_empty() {
            return Err(bad("grid", "grid is empty"));
        }
        Ok(v)
    }
}

fn default_initial() -> InitialState {
    InitialState::PlusX
}

fn default_readout() -> ReadoutBasis {
    ReadoutBasis::PlusX
}

fn check_dt(dt_max_s: Option<f64>) -> Result<(), ConfigError> {
    match dt_max_s {
        Some(d) if !(d > 0.0) || !d.is_finite() => Err(bad("dt_max_s", format!("must be positive, got {d}"))),
        _ => Ok(()),
    }
}

/// A single sequence, for export, modulation functions and spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub knill: bool,
    /// Samples of the modulation functions; defaults to 200 per shortest pulse.
    #[serde(default)]
    pub n_samples: Option<usize>,
    /// Frequency grid of the spectrum output.
    #[serde(default)]
    pub spectrum_hz: Option<Linspace>,
}

impl SequenceConfig {
    pub fn sequence(&self) -> Result<PulseSequence, ConfigError> {
        self.protocol.sequence(self.knill)
    }

    /// Spectrum grid in rad/s. Defaults to 0 ..= (N + 4) times the sensing
    /// frequency with 1001 points.
    pub fn spectrum_grid(&self) -> Result<Vec<f64>, ConfigError> {
        let l = match self.spectrum_hz {
            Some(l) => l,
            None => {
                let f = match &self.protocol {
                    ProtocolConfig::GdY(g) | ProtocolConfig::GdZ(g) => g.omega_scan_hz.abs() * (g.n + 4) as f64,
                    ProtocolConfig::Xy8(d) | ProtocolConfig::Cpmg(d) => 12.0 / (2.0 * d.tau_s),
                };
                Linspace { start: 0.0, stop: f, points: 1001 }
            }
        };
        if l.points == 0 {
            return Err(bad("spectrum_hz", "need at least one point"));
        }
        Ok(l.values().iter().map(|f| TWO_PI * f).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub knill: bool,
    pub variable: SweepVariable,
    pub grid: GridConfig,
    #[serde(default)]
    pub grid_full: Option<GridConfig>,
    /// Keep `omega_scan T_scan = 2 pi` at every grid point.
    #[serde(default)]
    pub cyclic_scan: bool,
    #[serde(default)]
    pub dd_time_cap_s: Option<f64>,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub errors: ErrorsConfig,
    pub n_mc: usize,
    #[serde(default)]
    pub n_mc_full: Option<usize>,
    #[serde(default = "default_initial")]
    pub initial_state: InitialState,
    #[serde(default = "default_readout")]
    pub readout: ReadoutBasis,
    pub master_seed: u64,
    #[serde(default)]
    pub dt_max_s: Option<f64>,
}

impl SweepConfig {
    pub fn build(&self, scale: Scale) -> Result<SweepSpec, ConfigError> {
        check_dt(self.dt_max_s)?;
        let grid = match (scale, &self.grid_full) {
            (Scale::Full, Some(g)) => g,
            _ => &self.grid,
        };
        let n_mc = match scale {
            Scale::Full => self.n_mc_full.unwrap_or(self.n_mc),
            Scale::Desk => self.n_mc,
        };
        if n_mc < 1 {
            return Err(bad("n_mc", "need at least one realization"));
        }
        let spec = SweepSpec {
            protocol: self.protocol.params()?,
            knill: self.knill,
            variable: self.variable,
            grid: grid.values(self.variable)?,
            cyclic_scan: self.cyclic_scan,
            dd_time_cap: self.dd_time_cap_s,
            environment: self.environment.build(scale)?,
            errors: self.errors.build()?,
            n_mc,
            initial_state: self.initial_state,
            readout: self.readout,
            master_seed: self.master_seed,
            dt_max: self.dt_max_s,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn default_qdyne_readout() -> ReadoutBasis {
    ReadoutBasis::PlusY
}

fn default_photon_n() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QdyneConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub knill: bool,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub errors: ErrorsConfig,
    #[serde(default = "default_initial")]
    pub initial_state: InitialState,
    #[serde(default = "default_qdyne_readout")]
    pub readout: ReadoutBasis,
    pub n_runs: usize,
    #[serde(default)]
    pub n_runs_full: Option<usize>,
    pub t_r_s: f64,
    pub r: f64,
    /// Photon knob `n`; the mean count per readout is `0.105 n`.
    #[serde(default = "default_photon_n")]
    pub photon_n: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub dt_max_s: Option<f64>,
}

impl QdyneConfig {
    pub fn build(&self, scale: Scale) -> Result<QdyneSpec, ConfigError> {
        check_dt(self.dt_max_s)?;
        let block = PointModel::new(
            self.protocol.sequence(self.knill)?,
            self.environment.build(scale)?,
            self.errors.build()?,
            self.initial_state,
            self.readout,
            self.dt_max_s,
        )?;
        let n_runs = match scale {
            Scale::Full => self.n_runs_full.unwrap_or(self.n_runs),
            Scale::Desk => self.n_runs,
        };
        let spec = QdyneSpec {
            block,
            n_runs,
            t_r: self.t_r_s,
            r: self.r,
            c: PHOTONS_PER_N * self.photon_n,
            master_seed: self.master_seed,
        };
        spec.validate().map_err(|e| match e {
            ExperimentError::InvalidParam { field: "c", reason } => bad("photon_n", reason),
            ExperimentError::InvalidParam { field: "t_r", reason } => bad("t_r_s", reason),
            e => e.into(),
        })?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub knill: bool,
    pub delta_over_omega: Linspace,
    pub epsilon: Linspace,
}

impl FidelityConfig {
    pub fn build(&self) -> Result<(ProtocolParams, Vec<f64>, Vec<f64>), ConfigError> {
        let d = self.delta_over_omega.values();
        let e = self.epsilon.values();
        if d.is_empty() {
            return Err(bad("delta_over_omega", "need at least one point"));
        }
        if e.is_empty() {
            return Err(bad("epsilon", "need at least one point"));
        }
        Ok((self.protocol.params()?, d, e))
    }
}

pub fn parse<T: serde::de::DeserializeOwned>(json: &str) -> Result<T, ConfigError> {
    serde_json::from_str(json).map_err(|e| ConfigError::Parse(e.to_string()))
}

pub fn to_json<T: Serialize>(cfg: &T) -> String {
    serde_json::to_string_pretty(cfg).expect("config types serialize")
}
