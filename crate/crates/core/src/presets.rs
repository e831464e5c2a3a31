//! Named configurations shipped with the crate.

use crate::config::{parse, ConfigError, EnvironmentConfig, FidelityConfig, QdyneConfig, SequenceConfig, SweepConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    Sequence,
    Sweep,
    Qdyne,
    Fidelity,
    Environment,
}

const SEQUENCE: &[(&str, &str)] = &[
    ("cpmg", include_str!("../presets/sequence/cpmg.json")),
    ("gdy_n12_delta", include_str!("../presets/sequence/gdy_n12_delta.json")),
    ("gdy_n16", include_str!("../presets/sequence/gdy_n16.json")),
    ("gdy_n20", include_str!("../presets/sequence/gdy_n20.json")),
    ("gdz_n10", include_str!("../presets/sequence/gdz_n10.json")),
    ("gdz_n10_knill", include_str!("../presets/sequence/gdz_n10_knill.json")),
    ("xy8", include_str!("../presets/sequence/xy8.json")),
];

const SWEEP: &[(&str, &str)] = &[
    ("fig2a", include_str!("../presets/sweep/fig2a.json")),
    ("fig2a_clean", include_str!("../presets/sweep/fig2a_clean.json")),
    ("fig2b", include_str!("../presets/sweep/fig2b.json")),
    ("fig2b_clean", include_str!("../presets/sweep/fig2b_clean.json")),
    ("fig2e", include_str!("../presets/sweep/fig2e.json")),
    ("fig2e_errors", include_str!("../presets/sweep/fig2e_errors.json")),
    ("fig2f", include_str!("../presets/sweep/fig2f.json")),
    ("fig2f_errors", include_str!("../presets/sweep/fig2f_errors.json")),
    ("fig3a", include_str!("../presets/sweep/fig3a.json")),
    ("fig3a_noisy", include_str!("../presets/sweep/fig3a_noisy.json")),
    ("fig3b", include_str!("../presets/sweep/fig3b.json")),
    ("fig3b_noisy", include_str!("../presets/sweep/fig3b_noisy.json")),
    ("fig3c", include_str!("../presets/sweep/fig3c.json")),
    ("fig3c_noisy", include_str!("../presets/sweep/fig3c_noisy.json")),
];

const QDYNE: &[(&str, &str)] = &[
    ("fig2c", include_str!("../presets/qdyne/fig2c.json")),
    ("fig2d", include_str!("../presets/qdyne/fig2d.json")),
];

const FIDELITY: &[(&str, &str)] = &[
    ("fig4a", include_str!("../presets/fidelity/fig4a.json")),
    ("fig4b", include_str!("../presets/fidelity/fig4b.json")),
    ("fig4c", include_str!("../presets/fidelity/fig4c.json")),
    ("fig4d", include_str!("../presets/fidelity/fig4d.json")),
    ("fig4e", include_str!("../presets/fidelity/fig4e.json")),
    ("fig4f", include_str!("../presets/fidelity/fig4f.json")),
];

const ENVIRONMENT: &[(&str, &str)] = &[
    ("fig2_ac_field", include_str!("../presets/environment/fig2_ac_field.json")),
    ("fig2_ac_field_noisy", include_str!("../presets/environment/fig2_ac_field_noisy.json")),
    ("fig3_tones", include_str!("../presets/environment/fig3_tones.json")),
    ("fig3_tones_noisy", include_str!("../presets/environment/fig3_tones_noisy.json")),
    ("nuclear_bath_100g", include_str!("../presets/environment/nuclear_bath_100g.json")),
];
fn table(kind: PresetKind) -> &'static [(&'static str, &'static str)] {
    match kind {
        PresetKind::Sequence => SEQUENCE,
        PresetKind::Sweep => SWEEP,
        PresetKind::Qdyne => QDYNE,
        PresetKind::Fidelity => FIDELITY,
        PresetKind::Environment => ENVIRONMENT,
    }
}

pub fn names(kind: PresetKind) -> Vec<&'static str> {
    table(kind).iter().map(|(n, _)| *n).collect()
}

/// The JSON text of a preset.
pub fn raw(kind: PresetKind, name: &str) -> Result<&'static str, ConfigError> {
    table(kind)
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, j)| *j)
        .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))
}

pub fn sequence(name: &str) -> Result<SequenceConfig, ConfigError> {
    parse(raw(PresetKind::Sequence, name)?)
}

pub fn sweep(name: &str) -> Result<SweepConfig, ConfigError> {
    parse(raw(PresetKind::Sweep, name)?)
}

pub fn qdyne(name: &str) -> Result<QdyneConfig, ConfigError> {
    parse(raw(PresetKind::Qdyne, name)?)
}

pub fn fidelity(name: &str) -> Result<FidelityConfig, ConfigError> {
    parse(raw(PresetKind::Fidelity, name)?)
}

pub fn environment(name: &str) -> Result<EnvironmentConfig, ConfigError> {
    parse(raw(PresetKind::Environment, name)?)
}
