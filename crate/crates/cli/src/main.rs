use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand};

use geodesic_core::analysis::{default_samples, modulation_functions, spectrum};
use geodesic_core::config::{parse, ConfigError, Scale};
use geodesic_core::experiments::{fidelity_map, run_sweep, SweepVariable};
use geodesic_core::export::{self, Provenance};
use geodesic_core::presets::{self, PresetKind};
use geodesic_core::qdyne::{power_spectrum, run_qdyne};

#[derive(Parser)]
#[command(name = "geodesic-sense", version, about = "Qubit sensing simulations: geodesic driving and dynamical decoupling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export a pulse sequence as JSON.
    Sequence(Common),
    /// Modulation functions F_x, F_y, F_z of a sequence.
    Modulation(Common),
    /// Fourier components of the modulation functions.
    Spectrum(Common),
    /// Spectroscopy sweep with Monte Carlo averaging.
    Sweep(Common),
    /// Synchronized-readout trace and its power spectrum.
    Qdyne(Common),
    /// Gate fidelity over a grid of detuning and amplitude errors.
    FidelityMap(Common),
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["preset", "config"])))]
struct Common {
    /// Name of a shipped preset.
    #[arg(long)]
    preset: Option<String>,
    /// Path to a JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the full Monte Carlo counts and grids instead of desk scale.
    #[arg(long)]
    full: bool,
    /// Integration step override in seconds.
    #[arg(long = "dt-max", allow_negative_numbers = true)]
    dt_max: Option<f64>,
    /// Realizations per point (sweep) or number of runs (qdyne).
    #[arg(long = "n-mc")]
    n_mc: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Model(m) => Failure::Runtime(m.to_string()),
            e => Failure::Config(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

impl Common {
    fn scale(&self) -> Scale {
        if self.full {
            Scale::Full
        } else {
            Scale::Desk
        }
    }

    fn scale_name(&self) -> &'static str {
        if self.full {
            "full"
        } else {
            "desk"
        }
    }

    fn load<T: serde::de::DeserializeOwned>(&self, kind: PresetKind) -> Result<T, Failure> {
        let text = match (&self.preset, &self.config) {
            (Some(name), _) => presets::raw(kind, name)?.to_string(),
            (None, Some(path)) => fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?,
            (None, None) => return Err(Failure::Config("need --preset or --config".into())),
        };
        Ok(parse(&text)?)
    }

    fn check_overrides(&self) -> Result<(), Failure> {
        if let Some(d) = self.dt_max {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Failure::Config(format!("invalid config field `dt_max`: must be positive, got {d}")));
            }
        }
        if self.n_mc == Some(0) {
            return Err(Failure::Config("invalid config field `n_mc`: need at least one realization".into()));
        }
        if self.jobs == Some(0) {
            return Err(Failure::Config("invalid config field `jobs`: need at least one worker".into()));
        }
        Ok(())
    }
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(dir: &Path, file: &str, contents: &str) -> Result<PathBuf, Failure> {
    let path = dir.join(file);
    let tmp = dir.join(format!(".{file}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(|e| runtime(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, &path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        runtime(format!("cannot move {} into place: {e}", path.display()))
    })?;
    Ok(path)
}

fn x_unit(v: SweepVariable) -> &'static str {
    match v {
        SweepVariable::Tau => "s",
        SweepVariable::OmegaScan | SweepVariable::DeltaScan => "rad_s",
    }
}

fn run(cmd: Command) -> Result<String, Failure> {
    let start = Instant::now();
    let (name, summary, c) = match &cmd {
        Command::Sequence(c) => {
            c.check_overrides()?;
            let cfg: geodesic_core::config::SequenceConfig = c.load(PresetKind::Sequence)?;
            let seq = cfg.sequence()?;
            fs::create_dir_all(&c.out).map_err(runtime)?;
            let mut json = seq.to_json().map_err(runtime)?;
            json.push('\n');
            write_atomic(&c.out, &format!("{}.sequence.json", cfg.name), &json)?;
            (cfg.name, format!("{} segments", seq.segments.len()), c)
        }
        Command::Modulation(c) | Command::Spectrum(c) => {
            c.check_overrides()?;
            let cfg: geodesic_core::config::SequenceConfig = c.load(PresetKind::Sequence)?;
            let seq = cfg.sequence()?;
            let n = cfg.n_samples.unwrap_or_else(|| default_samples(&seq));
            let trace = modulation_functions(&seq, n);
            fs::create_dir_all(&c.out).map_err(runtime)?;
            if matches!(cmd, Command::Modulation(_)) {
                write_atomic(&c.out, &format!("{}.modulation.csv", cfg.name), &export::modulation_csv(&trace))?;
                (cfg.name, format!("{n} samples"), c)
            } else {
                let grid = cfg.spectrum_grid()?;
                let line = spectrum(&trace, &grid);
                write_atomic(&c.out, &format!("{}.spectrum.csv", cfg.name), &export::spectrum_csv(&line))?;
                (cfg.name, format!("{} frequencies", grid.len()), c)
            }
        }
        Command::Sweep(c) => {
            c.check_overrides()?;
            let mut cfg: geodesic_core::config::SweepConfig = c.load(PresetKind::Sweep)?;
            if let Some(s) = c.seed {
                cfg.master_seed = s;
            }
            if let Some(d) = c.dt_max {
                cfg.dt_max_s = Some(d);
            }
            if let Some(n) = c.n_mc {
                cfg.n_mc = n;
                cfg.n_mc_full = Some(n);
            }
            let spec = cfg.build(c.scale())?;
            let result = run_sweep(&spec).map_err(runtime)?;
            fs::create_dir_all(&c.out).map_err(runtime)?;
            write_atomic(&c.out, &format!("{}.csv", cfg.name), &export::sweep_csv(&result))?;
            let prov = Provenance::new(&cfg.name, "sweep", c.scale_name(), x_unit(spec.variable), &result.meta, &cfg);
            write_atomic(&c.out, &format!("{}.meta.json", cfg.name), &prov.to_json())?;
            (
                cfg.name,
                format!("{} points x {} realizations", result.x.len(), result.meta.realizations_per_point),
                c,
            )
        }
        Command::Qdyne(c) => {
            c.check_overrides()?;
            let mut cfg: geodesic_core::config::QdyneConfig = c.load(PresetKind::Qdyne)?;
            if let Some(s) = c.seed {
                cfg.master_seed = s;
            }
            if let Some(d) = c.dt_max {
                cfg.dt_max_s = Some(d);
            }
            if let Some(n) = c.n_mc {
                cfg.n_runs = n;
                cfg.n_runs_full = Some(n);
            }
            let spec = cfg.build(c.scale())?;
            let trace = run_qdyne(&spec).map_err(runtime)?;
            let ps = power_spectrum(&trace);
            fs::create_dir_all(&c.out).map_err(runtime)?;
            write_atomic(&c.out, &format!("{}.csv", cfg.name), &export::qdyne_csv(&trace))?;
            write_atomic(&c.out, &format!("{}.spectrum.csv", cfg.name), &export::power_spectrum_csv(&ps))?;
            let meta = serde_json::json!({
                "master_seed": spec.master_seed,
                "n_runs": spec.n_runs,
                "dt_rep_s": trace.dt_rep,
                "mean_photons_c": spec.c,
                "contrast_r": spec.r,
                "normalization": "n_runs",
                "seed_rule": "splitmix64(master, run_index, 0) noise; splitmix64(master, run_index, 1) readout",
            });
            let prov = Provenance::new(&cfg.name, "qdyne", c.scale_name(), "run_index", &meta, &cfg);
            write_atomic(&c.out, &format!("{}.meta.json", cfg.name), &prov.to_json())?;
            let k = ps.peak();
            (
                cfg.name,
                format!("{} runs, peak {:.3} Hz", trace.counts.len(), ps.freq_hz[k]),
                c,
            )
        }
        Command::FidelityMap(c) => {
            c.check_overrides()?;
            let cfg: geodesic_core::config::FidelityConfig = c.load(PresetKind::Fidelity)?;
            let (params, d, e) = cfg.build()?;
            let map = fidelity_map(&params, cfg.knill, &d, &e).map_err(runtime)?;
            fs::create_dir_all(&c.out).map_err(runtime)?;
            write_atomic(&c.out, &format!("{}.csv", cfg.name), &export::fidelity_csv(&map))?;
            let meta = serde_json::json!({ "mean_fidelity": map.mean() });
            let prov = Provenance::new(&cfg.name, "fidelity_map", c.scale_name(), "delta_over_omega", &meta, &cfg);
            write_atomic(&c.out, &format!("{}.meta.json", cfg.name), &prov.to_json())?;
            (cfg.name, format!("{}x{} grid, mean {:.4}", d.len(), e.len(), map.mean()), c)
        }
    };
    Ok(format!(
        "{name}: {summary}, {:.2} s -> {}",
        start.elapsed().as_secs_f64(),
        c.out.display()
    ))
}

fn jobs(cmd: &Command) -> Option<usize> {
    match cmd {
        Command::Sequence(c)
        | Command::Modulation(c)
        | Command::Spectrum(c)
        | Command::Sweep(c)
        | Command::Qdyne(c)
        | Command::FidelityMap(c) => c.jobs,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = jobs(&cli.command).filter(|&n| n > 0) {
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.command) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
