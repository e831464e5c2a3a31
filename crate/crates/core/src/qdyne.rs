//! Synchronized readout: a sensing block repeated with a fixed period,
//! photon-count statistics per readout and the power spectrum of the
//! count record.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::environment::derive_seed;
use crate::experiments::{ExperimentError, PointModel, Realization};

/// Mean photon count per readout per unit of the photon knob `n`.
pub const PHOTONS_PER_N: f64 = 0.105;

#[derive(Debug, Clone)]
pub struct QdyneSpec {
    /// The sensing block. Its tones are evaluated at absolute time, so the
    /// signal phase advances from run to run.
    pub block: PointModel,
    pub n_runs: usize,
    /// Readout and reset delay after each block, seconds.
    pub t_r: f64,
    /// Readout contrast.
    pub r: f64,
    /// Mean photon count per readout of the bright state.
    pub c: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdyneTrace {
    pub counts: Vec<u64>,
    pub p: Vec<f64>,
    /// Repetition period `T_seq + t_r`, seconds.
    pub dt_rep: f64,
}

impl QdyneTrace {
    pub fn start_time(&self, n: usize) -> f64 {
        n as f64 * self.dt_rep
    }

    pub fn mean_count(&self) -> f64 {
        self.counts.iter().sum::<u64>() as f64 / self.counts.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    pub freq_hz: Vec<f64>,
    pub magnitude: Vec<f64>,
}

impl PowerSpectrum {
    /// Bin spacing in Hz.
    pub fn resolution(&self) -> f64 {
        if self.freq_hz.len() > 1 {
            self.freq_hz[1] - self.freq_hz[0]
        } else {
            0.0
        }
    }

    /// Index of the largest nonzero-frequency bin.
    pub fn peak(&self) -> usize {
        (1..self.magnitude.len())
            .max_by(|&a, &b| self.magnitude[a].total_cmp(&self.magnitude[b]))
            .unwrap_or(0)
    }

    /// Full width at half maximum around bin `k`, in bins, with linear
    /// interpolation of the half-maximum crossings.
    pub fn fwhm_bins(&self, k: usize) -> f64 {
        let m = &self.magnitude;
        let half = m[k] / 2.0;
        let mut i = k;
        while i > 0 && m[i - 1] > half {
            i -= 1;
        }
        let lo = if i > 0 {
            (i - 1) as f64 + (half - m[i - 1]) / (m[i] - m[i - 1])
        } else {
            0.0
        };
        let mut j = k;
        while j + 1 < m.len() && m[j + 1] > half {
            j += 1;
        }
        let hi = if j + 1 < m.len() {
            j as f64 + (m[j] - half) / (m[j] - m[j + 1])
        } else {
            j as f64
        };
        hi - lo
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::InvalidParam {
        field,
        reason: reason.into(),
    }
}

impl QdyneSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.n_runs < 2 {
            return Err(invalid("n_runs", "need at least two runs"));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(invalid("r", format!("contrast must lie in [0, 1], got {}", self.r)));
        }
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(invalid("c", format!("photon count must be nonnegative, got {}", self.c)));
        }
        if !(self.t_r >= 0.0) || !self.t_r.is_finite() {
            return Err(invalid("t_r", format!("delay must be nonnegative, got {}", self.t_r)));
        }
        Ok(())
    }

    pub fn dt_rep(&self) -> f64 {
        self.block.sequence.t_seq + self.t_r
    }
}

/// `counts_n ~ Poisson(C (1 - r Bernoulli(p_n)))`.
pub fn draw_count(p: f64, r: f64, c: f64, seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // one uniform per readout keeps the Poisson stream aligned for every p
    let bit = rng.gen::<f64>() < p.clamp(0.0, 1.0);
    let mean = c * (1.0 - if bit { r } else { 0.0 });
    if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(&mut rng) as u64
    } else {
        0
    }
}

/// Runs the block `n_runs` times. Run `n` starts at `n (T_seq + t_r)`.
/// Stochastic noise, if any, is drawn independently per run.
pub fn run_qdyne(spec: &QdyneSpec) -> Result<QdyneTrace, ExperimentError> {
    spec.validate()?;
    let dt_rep = spec.dt_rep();
    let block = &spec.block;
    let stochastic = block.is_stochastic();
    let quiet = Realization::quiet();
    let p: Vec<f64> = (0..spec.n_runs)
        .into_par_iter()
        .map(|n| {
            let t0 = n as f64 * dt_rep;
            if stochastic {
                let seed = derive_seed(spec.master_seed, n as u64, 0);
                let noise = Realization::draw(&block.environment, &block.errors, seed, t0, block.sequence.t_seq);
                block.population(t0, &noise)
            } else {
                block.population(t0, &quiet)
            }
        })
        .collect::<Result<_, _>>()?;
    let counts = p
        .iter()
        .enumerate()
        .map(|(n, &pn)| draw_count(pn, spec.r, spec.c, derive_seed(spec.master_seed, n as u64, 1)))
        .collect();
    Ok(QdyneTrace { counts, p, dt_rep })
}

/// `|DFT(y - mean y)| / n_runs` on `0 ..= 1/(2 dt_rep)`.
pub fn power_spectrum(trace: &QdyneTrace) -> PowerSpectrum {
    let n = trace.counts.len();
    let mean = trace.mean_count();
    let mut buf: Vec<Complex<f64>> = trace
        .counts
        .iter()
        .map(|&y| Complex::new(y as f64 - mean, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = 1.0 / (n as f64 * trace.dt_rep);
    let half = n / 2 + 1;
    PowerSpectrum {
        freq_hz: (0..half).map(|k| k as f64 * df).collect(),
        magnitude: buf[..half].iter().map(|z| z.norm() / n as f64).collect(),
    }
}

/// Frequency at which a tone of angular frequency `nu` appears when sampled
/// every `dt_rep` seconds.
pub fn alias_frequency(nu: f64, dt_rep: f64) -> f64 {
    let f = nu / (2.0 * std::f64::consts::PI);
    (f - (f * dt_rep).round() / dt_rep).abs()
}
