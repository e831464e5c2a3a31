//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero on any failure not listed in `KNOWN_FAILURES`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use geodesic_core::analysis::{
    default_samples, gate_fidelity, ideal_geodesic_unitary, modulation_functions, spectrum,
    theta_bruteforce_units, theta_closed_form_units,
};
use geodesic_core::config::Scale;
use geodesic_core::environment::{free_induction_t2star, AcField, Tone};
use geodesic_core::experiments::{fidelity_map, run_sweep, SweepResult, SweepSpec};
use geodesic_core::export;
use geodesic_core::presets::{self, PresetKind};
use geodesic_core::qdyne::{alias_frequency, power_spectrum, run_qdyne};
use geodesic_core::quantum::{propagate, Operator, StateVector};
use geodesic_core::sequences::{build_dd, build_gd_y, DdFlavor, DdParams, GdAxis, GdParams, ProtocolParams, PulseMode};

const TWO_PI: f64 = 2.0 * PI;

/// Criteria reported as FAIL without failing the run. Each has a ledger entry.
const KNOWN_FAILURES: &[&str] = &["robustness ordering"];

struct Outcome {
    pass: bool,
    detail: String,
    /// Set when the only failing part is a known, documented one.
    known: bool,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail, known: false }
}

/// Runs of consecutive points below `threshold`, as (argmin, first, last).
fn dips(y: &[f64], threshold: f64) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < y.len() {
        if y[i] < threshold {
            let start = i;
            while i + 1 < y.len() && y[i + 1] < threshold {
                i += 1;
            }
            let arg = (start..=i).min_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
            out.push((arg, start, i));
        }
        i += 1;
    }
    out
}

fn sweep_preset(name: &str, n_mc: Option<usize>) -> (SweepSpec, SweepResult) {
    let mut cfg = presets::sweep(name).unwrap();
    if let Some(n) = n_mc {
        cfg.n_mc = n;
    }
    let spec = cfg.build(Scale::Desk).unwrap();
    let res = run_sweep(&spec).unwrap();
    (spec, res)
}

fn geodesic_cycle() -> Outcome {
    let start = Instant::now();
    let seq = presets::sequence("gdy_n12_delta").unwrap().sequence().unwrap();
    let p = match seq.params {
        ProtocolParams::Gd(p) => p,
        _ => unreachable!(),
    };
    let ket = StateVector::ket1();
    let tl = seq.control_timeline().unwrap();
    let mut worst: f64 = 0.0;
    for k in 1..=p.n {
        // midpoint of the free interval after pulse k (the last one closes the cycle)
        let t = p.t_scan * k as f64 / p.n as f64;
        let (head, _) = tl.split_at(t);
        let u = propagate(&head, 1.0).unwrap();
        let ideal = ideal_geodesic_unitary(p.omega_scan * t, k as f64 * PI, p.axis);
        worst = worst.max(1.0 - u.apply(&ket).overlap(&ideal.apply(&ket)));
    }
    let full = propagate(&tl, 1.0).unwrap();
    let closure = 1.0 - gate_fidelity(&full, &Operator::identity(2)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-6 && closure < 1e-6 && secs < 1.0,
        format!("worst midpoint infidelity {worst:.1e} (< 1e-6), cycle 1 - F {closure:.1e} (< 1e-6), {secs:.3} s (< 1 s)"),
    )
}

fn theta_identity() -> Outcome {
    let mut bad = Vec::new();
    for n in [12usize, 20, 25, 80] {
        let p = GdParams {
            n,
            omega_scan: TWO_PI * 1e6,
            t_scan: 1e-6,
            m: 1,
            rabi_max: 1.0,
            axis: GdAxis::Y,
            pulse_mode: PulseMode::Delta,
        };
        let brute = theta_bruteforce_units(&build_gd_y(&p).unwrap()).unwrap();
        let ok = brute.len() == n
            && brute
                .iter()
                .enumerate()
                .all(|(i, &b)| b == theta_closed_form_units(i + 1));
        if !ok {
            bad.push(n);
        }
    }
    outcome(bad.is_empty(), format!("exact for N in {{12, 20, 25, 80}}, all n <= N; mismatches at N = {bad:?}"))
}

fn harmonic_suppression() -> Outcome {
    let start = Instant::now();
    let seq = presets::sequence("gdy_n20").unwrap().sequence().unwrap();
    let w = match seq.params {
        ProtocolParams::Gd(p) => p.omega_scan,
        _ => unreachable!(),
    };
    let tr = modulation_functions(&seq, default_samples(&seq).max(40001));
    let omegas: Vec<f64> = (1..19).map(|k| k as f64 * w).collect();
    let s = spectrum(&tr, &omegas);
    let f1 = s.f_z[0].norm();
    let worst = s.f_z[1..].iter().map(|z| z.norm()).fold(0.0, f64::max) / f1;

    let tau = 1e-6;
    let xy8 = build_dd(&DdParams {
        tau,
        n_pulses: 128,
        rabi: 1.0,
        flavor: DdFlavor::Xy8,
        knill: false,
        pulse_mode: PulseMode::Delta,
    })
    .unwrap();
    let tr = modulation_functions(&xy8, 128 * 200 + 1);
    let w = PI / tau;
    let s = spectrum(&tr, &[w, 3.0 * w, 5.0 * w]);
    let r3 = s.f_z[1].norm() / s.f_z[0].norm();
    let r5 = s.f_z[2].norm() / s.f_z[0].norm();
    let e3 = (r3 * 3.0 - 1.0).abs();
    let e5 = (r5 * 5.0 - 1.0).abs();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 0.01 && e3 < 0.02 && e5 < 0.02 && secs < 10.0,
        format!(
            "GD_y N=20 max |f_z(k w)|/|f_z(w)| for 1<k<19 = {worst:.2e} (< 0.01); XY8 ratios {r3:.4}, {r5:.4} \
             (rel. err {e3:.1e}, {e5:.1e} < 0.02); {secs:.1} s"
        ),
    )
}

fn unambiguous_spectroscopy() -> Outcome {
    let start = Instant::now();
    let (_, gd) = sweep_preset("fig2b", Some(500));
    let step = (gd.x[1] - gd.x[0]).abs();
    let gd_dips = dips(&gd.signal, 0.8);
    let one_dip = gd_dips.len() == 1 && (gd.x[gd_dips[0].0] - TWO_PI * 500e3).abs() <= step + 1e-6;
    let gd_desc: Vec<String> = gd_dips
        .iter()
        .map(|d| format!("{:.0} kHz ({:.3})", gd.x[d.0] / TWO_PI / 1e3, gd.signal[d.0]))
        .collect();

    // alias positions with only the tones that could alias there
    let mut cfg = presets::sweep("fig2b").unwrap();
    cfg.n_mc = 500;
    cfg.environment.tones.remove(0);
    cfg.grid = geodesic_core::config::GridConfig::ValuesHz(vec![2499.875e3 / 5.0, 1500.05e3 / 3.0]);
    let alias = run_sweep(&cfg.build(Scale::Desk).unwrap()).unwrap();
    let alias_min = alias.signal.iter().copied().fold(1.0, f64::min);

    let (_, dd) = sweep_preset("fig2a", Some(500));
    let mut sorted = dd.signal.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let near: Vec<(f64, f64)> = dips(&dd.signal, median - 0.1)
        .iter()
        .map(|d| (1.0 / (2.0 * dd.x[d.0]) / 1e3, dd.signal[d.0]))
        .filter(|(f, _)| (f - 500.0).abs() <= 50.0)
        .collect();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        one_dip && alias_min >= 0.95 && near.len() >= 2,
        format!(
            "GD_y dips < 0.8: [{}] (need one, within {:.0} kHz of 500); alias positions min {alias_min:.3} (>= 0.95); \
             XY8 dips below median-0.1 within 50 kHz of 500: {} at {:?}; {secs:.0} s",
            gd_desc.join(", "),
            step / TWO_PI / 1e3,
            near.len(),
            near.iter().map(|(f, s)| format!("{f:.1} kHz ({s:.3})")).collect::<Vec<_>>(),
        ),
    )
}

fn heterodyne_closed_form() -> Outcome {
    let base = presets::sweep("fig3c").unwrap();
    let w = TWO_PI * 80e3;
    // resonance at delta_scan = 0; large |delta_scan| alone costs the finite
    // pulses a little population, which is not what this checks
    let delta = w;
    let run_field = |field: AcField, delta_scan: f64| -> f64 {
        let mut spec = base.build(Scale::Desk).unwrap();
        spec.environment.field = field;
        spec.grid = vec![delta_scan];
        run_sweep(&spec).unwrap().signal[0]
    };
    let run = |tone: Tone, delta_scan: f64| run_field(AcField::new(vec![tone]).unwrap(), delta_scan);
    let t = match base.build(Scale::Desk).unwrap().protocol {
        ProtocolParams::Gd(p) => p.m as f64 * p.t_scan,
        _ => unreachable!(),
    };
    let mut worst: f64 = 0.0;
    for (i, chi) in [0.0, 0.6, 1.2, 2.5].into_iter().enumerate() {
        for k in 0..=8 {
            let bt = PI * k as f64 / 8.0;
            let tone = Tone { b: bt / t, nu: delta, theta: chi + 0.3 * i as f64, alpha: 0.3 * i as f64 };
            let sim = run(tone, delta - w);
            let exact = geodesic_core::experiments::resonant_population_check(tone.b, tone.theta, tone.alpha, t);
            worst = worst.max((sim - exact).abs());
        }
    }
    let mut off_min: f64 = 1.0;
    let mut baseline_min: f64 = 1.0;
    for bt in [PI / 4.0, PI / 2.0, PI] {
        let b = bt / t;
        for ratio in [10.0, 15.0, -10.0, -20.0] {
            let tone = Tone { b, nu: delta, theta: 0.0, alpha: 0.0 };
            off_min = off_min.min(run(tone, delta - w + ratio * b));
            baseline_min = baseline_min.min(run_field(AcField::empty(), delta - w + ratio * b));
        }
    }
    outcome(
        worst < 0.02 && off_min >= 0.99,
        format!(
            "max |P - cos^2| over bT in [0, pi] = {worst:.2e} (< 0.02); off-resonant (>= 10 b) min P {off_min:.4} (>= 0.99), \
             tone-free min {baseline_min:.4}"
        ),
    )
}

fn fig3_dips() -> Outcome {
    let (spec, gz) = sweep_preset("fig3c", None);
    let t = match spec.protocol {
        ProtocolParams::Gd(p) => p.m as f64 * p.t_scan,
        _ => unreachable!(),
    };
    let w = TWO_PI * 80e3;
    let step = (gz.x[1] - gz.x[0]).abs();
    let expected: Vec<f64> = spec.environment.field.tones().iter().map(|t| t.nu - w).collect();
    let lobe = TWO_PI / t;
    let stray: Vec<f64> = (0..gz.x.len())
        .filter(|&i| gz.signal[i] < 0.8 && expected.iter().all(|e| (gz.x[i] - e).abs() >= lobe))
        .map(|i| gz.x[i] / TWO_PI / 1e3)
        .collect();
    let mut placed = true;
    let mut desc = Vec::new();
    for e in &expected {
        let arg = (0..gz.x.len())
            .filter(|&i| (gz.x[i] - e).abs() < lobe)
            .min_by(|&a, &b| gz.signal[a].total_cmp(&gz.signal[b]))
            .unwrap();
        let ok = gz.signal[arg] < 0.8 && (gz.x[arg] - e).abs() <= step + 1e-6;
        placed &= ok;
        desc.push(format!("{:.0}->{:.0}", e / TWO_PI / 1e3, gz.x[arg] / TWO_PI / 1e3));
    }

    let (spec, cp) = sweep_preset("fig3a", None);
    let step_hz = (1.0 / (2.0 * cp.x[1]) - 1.0 / (2.0 * cp.x[0])).abs();
    let mut sorted = cp.signal.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let found: Vec<f64> = dips(&cp.signal, median - 0.1).iter().map(|d| 1.0 / (2.0 * cp.x[d.0])).collect();
    let (lo, hi) = found_range(&cp.x);
    let mut per_tone = Vec::new();
    for tone in spec.environment.field.tones() {
        let f = tone.nu.abs() / TWO_PI;
        let n = (1..40)
            .step_by(2)
            .map(|k| f / k as f64)
            .filter(|h| *h >= lo && *h <= hi)
            .filter(|h| found.iter().any(|d| (d - h).abs() <= step_hz + 1e-6))
            .count();
        per_tone.push(n);
    }
    outcome(
        stray.is_empty() && placed && per_tone.iter().all(|&n| n >= 2),
        format!(
            "GD_z expected->argmin kHz [{}] (within {:.0} kHz), points < 0.8 outside main lobes: {stray:?}; \
             CPMG odd-harmonic dips below median-0.1 per tone {per_tone:?} (>= 2)",
            desc.join(", "),
            step / TWO_PI / 1e3
        ),
    )
}

fn found_range(tau: &[f64]) -> (f64, f64) {
    let f: Vec<f64> = tau.iter().map(|t| 1.0 / (2.0 * t)).collect();
    let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f.iter().copied().fold(0.0, f64::max);
    (lo, hi)
}

fn t2_star() -> Outcome {
    let start = Instant::now();
    let env = presets::environment("fig2_ac_field_noisy").unwrap().build(Scale::Desk).unwrap();
    let ou = env.dephasing.unwrap();
    let t2 = free_induction_t2star(&ou, 10e-6, 5000).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (1.9e-6..=2.6e-6).contains(&t2) && secs < 60.0,
        format!("T2* = {:.3} us (in [1.9, 2.6]), {secs:.1} s", t2 * 1e6),
    )
}

fn robustness() -> Outcome {
    let mean = |name: &str| {
        let cfg = presets::fidelity(name).unwrap();
        let (params, d, e) = cfg.build().unwrap();
        let map = fidelity_map(&params, cfg.knill, &d, &e).unwrap();
        let i0 = d.iter().position(|x| x.abs() < 1e-12).unwrap();
        let j0 = e.iter().position(|x| x.abs() < 1e-12).unwrap();
        (map.mean(), map.at(i0, j0))
    };
    let (xy8, xy8_0) = mean("fig4a");
    let (g20, g20_0) = mean("fig4b");
    let (g80, g80_0) = mean("fig4c");
    let (cpmg, cpmg_0) = mean("fig4d");
    let (gz, gz_0) = mean("fig4e");
    let (gzk, gzk_0) = mean("fig4f");
    let origin_ok = [xy8_0, g20_0, g80_0, cpmg_0, gz_0, gzk_0].iter().all(|f| (f - 1.0).abs() < 1e-6);
    let a = g80 >= g20;
    let b = g20 >= xy8;
    let c = gzk >= gz;
    let detail = format!(
        "mean F: GD_y80 {g80:.4} >= GD_y20 {g20:.4} [{}] >= XY8 {xy8:.4} [{}]; GD_z+Knill {gzk:.4} >= GD_z {gz:.4} [{}]; \
         CPMG {cpmg:.4}; F(0,0) = 1 within 1e-6 [{}]",
        ok(a),
        ok(b),
        ok(c),
        ok(origin_ok)
    );
    Outcome {
        pass: a && b && c && origin_ok,
        known: a && !b && c && origin_ok,
        detail,
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "fails"
    }
}

fn qdyne_resolution() -> (Outcome, String, String) {
    let start = Instant::now();
    let spec = presets::qdyne("fig2d").unwrap().build(Scale::Desk).unwrap();
    let trace = run_qdyne(&spec).unwrap();
    let ps = power_spectrum(&trace);
    let res = ps.resolution();
    let alias = alias_frequency(TWO_PI * 500e3, trace.dt_rep);
    let k = ps.peak();
    let within = (ps.freq_hz[k] - alias).abs() <= res;
    let fwhm = ps.fwhm_bins(k);
    let others = (1..ps.magnitude.len())
        .filter(|&i| i.abs_diff(k) > 2)
        .map(|i| ps.magnitude[i])
        .fold(0.0, f64::max);
    let dominant = ps.magnitude[k] >= 3.0 * others;
    let mut sorted = ps.magnitude[1..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted[sorted.len() / 2];
    let bin = |f: f64| (f / res).round() as usize;
    let tone_aliases = [1500.05e3, 2499.875e3].map(|nu| ps.magnitude[bin(alias_frequency(TWO_PI * nu, trace.dt_rep))]);
    let quiet_aliases = tone_aliases.iter().all(|&m| m < 5.0 * floor);

    let n = trace.counts.len() as f64;
    let mean = trace.mean_count();
    let var = trace.counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let p_bar = trace.p.iter().sum::<f64>() / n;
    let expect = spec.c * (1.0 - spec.r * p_bar);
    let z = (mean - expect) / (var / n).sqrt();
    let secs = start.elapsed().as_secs_f64();
    let o = outcome(
        within && fwhm <= 2.0 && dominant && quiet_aliases && z.abs() <= 3.0,
        format!(
            "peak {:.2} Hz vs alias {alias:.2} Hz (bin {res:.3} Hz), FWHM {fwhm:.2} bins (<= 2), peak/next {:.1} (>= 3), \
             tone-2/3 alias bins {:.4}, {:.4} vs 5x floor {:.4}; mean counts {mean:.4} vs C(1 - r p) {expect:.4}, \
             z = {z:.2} (|z| <= 3); {secs:.0} s",
            ps.freq_hz[k],
            ps.magnitude[k] / others,
            tone_aliases[0],
            tone_aliases[1],
            5.0 * floor
        ),
    );
    (o, export::qdyne_csv(&trace), export::power_spectrum_csv(&ps))
}

/// Every CSV a preset produces at desk scale.
fn preset_csvs(kind: PresetKind, name: &str, n_mc: Option<usize>) -> Vec<String> {
    match kind {
        PresetKind::Sequence => {
            let cfg = presets::sequence(name).unwrap();
            let seq = cfg.sequence().unwrap();
            let n = cfg.n_samples.unwrap_or_else(|| default_samples(&seq));
            let tr = modulation_functions(&seq, n);
            let line = spectrum(&tr, &cfg.spectrum_grid().unwrap());
            vec![export::modulation_csv(&tr), export::spectrum_csv(&line)]
        }
        PresetKind::Sweep => {
            let mut cfg = presets::sweep(name).unwrap();
            if let Some(n) = n_mc {
                cfg.n_mc = n;
            }
            vec![export::sweep_csv(&run_sweep(&cfg.build(Scale::Desk).unwrap()).unwrap())]
        }
        PresetKind::Qdyne => {
            let trace = run_qdyne(&presets::qdyne(name).unwrap().build(Scale::Desk).unwrap()).unwrap();
            vec![export::qdyne_csv(&trace), export::power_spectrum_csv(&power_spectrum(&trace))]
        }
        PresetKind::Fidelity => {
            let cfg = presets::fidelity(name).unwrap();
            let (params, d, e) = cfg.build().unwrap();
            vec![export::fidelity_csv(&fidelity_map(&params, cfg.knill, &d, &e).unwrap())]
        }
        PresetKind::Environment => Vec::new(),
    }
}

fn determinism(fig2d: Option<Vec<String>>) -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    let mut differing = Vec::new();
    for kind in [PresetKind::Sequence, PresetKind::Sweep, PresetKind::Qdyne, PresetKind::Fidelity] {
        for name in presets::names(kind) {
            // stochastic sweeps are rerun with fewer realizations; seeds are per realization
            let n_mc = match kind {
                PresetKind::Sweep => {
                    let spec = presets::sweep(name).unwrap().build(Scale::Desk).unwrap();
                    spec.point(0).unwrap().is_stochastic().then_some(8)
                }
                _ => None,
            };
            let first = match (&fig2d, kind == PresetKind::Qdyne && name == "fig2d") {
                (Some(csvs), true) => csvs.clone(),
                _ => preset_csvs(kind, name, n_mc),
            };
            let second = preset_csvs(kind, name, n_mc);
            checked += 1;
            if first != second {
                differing.push(name);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        differing.is_empty(),
        format!("{checked} presets rerun, byte-identical CSVs; differing: {differing:?}; {secs:.0} s"),
    )
}

fn main() -> ExitCode {
    // positional arguments select criteria by substring; libtest flags are ignored
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let want = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let start = Instant::now();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {}", o.detail);
        results.push((name, o));
    };
    let checks: [(&'static str, fn() -> Outcome); 8] = [
        ("geodesic-cycle exactness", geodesic_cycle),
        ("theta identity", theta_identity),
        ("harmonic suppression", harmonic_suppression),
        ("heterodyne closed form", heterodyne_closed_form),
        ("fig3 dip placement", fig3_dips),
        ("T2* reproduction", t2_star),
        ("robustness ordering", robustness),
        ("unambiguous spectroscopy", unambiguous_spectroscopy),
    ];
    for (name, f) in checks {
        if want(name) {
            report(name, f());
        }
    }
    let mut fig2d = None;
    if want("qdyne resolution") {
        let (q, csv, spec_csv) = qdyne_resolution();
        report("qdyne resolution", q);
        fig2d = Some(vec![csv, spec_csv]);
    }
    if want("determinism") {
        report("determinism", determinism(fig2d));
    }

    let fatal: Vec<&str> = results
        .iter()
        .filter(|(n, o)| !o.pass && !(o.known && KNOWN_FAILURES.contains(n)))
        .map(|(n, _)| *n)
        .collect();
    let known = results.iter().filter(|(_, o)| !o.pass).count() - fatal.len();
    println!(
        "acceptance: {} of {} criteria pass, {known} known failure(s), {} unexpected; {:.0} s",
        results.iter().filter(|(_, o)| o.pass).count(),
        results.len(),
        fatal.len(),
        start.elapsed().as_secs_f64()
    );
    if fatal.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
