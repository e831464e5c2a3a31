//! Simulation engine for qubit sensing with geodesic driving and dynamical
//! decoupling.

pub mod analysis;
pub mod config;
pub mod environment;
pub mod experiments;
pub mod export;
pub mod presets;
pub mod qdyne;
pub mod quantum;
pub mod sequences;
