//! CSV and JSON result formats. Numbers are written in the shortest decimal
//! form that parses back to the same `f64`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{ModulationTrace, SpectrumLine};
use crate::experiments::{FidelityMap, SweepResult};
use crate::qdyne::{PowerSpectrum, QdyneTrace};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("expected header `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("empty table")]
    Empty,
}

pub const MODULATION_HEADER: [&str; 4] = ["t_s", "F_x", "F_y", "F_z"];
pub const SPECTRUM_HEADER: [&str; 7] = ["omega_rad_s", "re_f_x", "im_f_x", "re_f_y", "im_f_y", "re_f_z", "im_f_z"];
pub const SWEEP_HEADER: [&str; 3] = ["x", "signal", "stderr"];
pub const FIDELITY_HEADER: [&str; 3] = ["delta_over_omega", "epsilon", "fidelity"];
pub const QDYNE_HEADER: [&str; 4] = ["run_index", "start_time_s", "p_n", "counts"];
pub const QDYNE_SPECTRUM_HEADER: [&str; 2] = ["freq_hz", "magnitude"];

fn write_table<const N: usize>(header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Parses a numeric table and checks its header.
pub fn read_table(text: &str, header: &[&str]) -> Result<Vec<Vec<f64>>, ExportError> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(ExportError::Header {
            expected: header.join(","),
            found: found.join(","),
        });
    }
    let mut rows = vec![];
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|e| ExportError::Row {
                    row: i + 1,
                    reason: format!("`{s}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ExportError::Empty);
    }
    Ok(rows)
}

fn col(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn modulation_csv(m: &ModulationTrace) -> String {
    write_table(
        MODULATION_HEADER,
        (0..m.t.len()).map(|k| [num(m.t[k]), num(m.f_x[k]), num(m.f_y[k]), num(m.f_z[k])]),
    )
}

pub fn read_modulation_csv(text: &str) -> Result<ModulationTrace, ExportError> {
    let rows = read_table(text, &MODULATION_HEADER)?;
    Ok(ModulationTrace {
        t: col(&rows, 0),
        f_x: col(&rows, 1),
        f_y: col(&rows, 2),
        f_z: col(&rows, 3),
    })
}

pub fn spectrum_csv(s: &SpectrumLine) -> String {
    write_table(
        SPECTRUM_HEADER,
        (0..s.omega.len()).map(|k| {
            [
                num(s.omega[k]),
                num(s.f_x[k].re),
                num(s.f_x[k].im),
                num(s.f_y[k].re),
                num(s.f_y[k].im),
                num(s.f_z[k].re),
                num(s.f_z[k].im),
            ]
        }),
    )
}

pub fn read_spectrum_csv(text: &str) -> Result<SpectrumLine, ExportError> {
    let rows = read_table(text, &SPECTRUM_HEADER)?;
    let c = |j: usize| rows.iter().map(|r| Complex64::new(r[j], r[j + 1])).collect();
    Ok(SpectrumLine {
        omega: col(&rows, 0),
        f_x: c(1),
        f_y: c(3),
        f_z: c(5),
    })
}

pub fn sweep_csv(r: &SweepResult) -> String {
    write_table(
        SWEEP_HEADER,
        (0..r.x.len()).map(|k| [num(r.x[k]), num(r.signal[k]), num(r.stderr[k])]),
    )
}

/// `(x, signal, stderr)` columns.
pub fn read_sweep_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), ExportError> {
    let rows = read_table(text, &SWEEP_HEADER)?;
    Ok((col(&rows, 0), col(&rows, 1), col(&rows, 2)))
}

/// Long format, one row per grid point, `epsilon` varying fastest.
pub fn fidelity_csv(f: &FidelityMap) -> String {
    let rows = f.delta_over_omega.iter().enumerate().flat_map(|(i, &d)| {
        f.epsilon
            .iter()
            .enumerate()
            .map(move |(j, &e)| [num(d), num(e), num(f.fidelity[i][j])])
    });
    write_table(FIDELITY_HEADER, rows)
}

pub fn read_fidelity_csv(text: &str) -> Result<FidelityMap, ExportError> {
    let rows = read_table(text, &FIDELITY_HEADER)?;
    let mut delta: Vec<f64> = vec![];
    let mut eps: Vec<f64> = vec![];
    for r in &rows {
        if delta.last() != Some(&r[0]) {
            delta.push(r[0]);
        }
        if delta.len() == 1 {
            eps.push(r[1]);
        }
    }
    if delta.len() * eps.len() != rows.len() {
        return Err(ExportError::Row {
            row: rows.len(),
            reason: "rows do not form a rectangular grid".into(),
        });
    }
    let fidelity = rows.chunks(eps.len()).map(|c| col(c, 2)).collect();
    Ok(FidelityMap {
        delta_over_omega: delta,
        epsilon: eps,
        fidelity,
    })
}

pub fn qdyne_csv(t: &QdyneTrace) -> String {
    write_table(
        QDYNE_HEADER,
        (0..t.counts.len()).map(|n| {
            [
                n.to_string(),
                num(t.start_time(n)),
                num(t.p[n]),
                t.counts[n].to_string(),
            ]
        }),
    )
}

pub fn read_qdyne_csv(text: &str) -> Result<QdyneTrace, ExportError> {
    let rows = read_table(text, &QDYNE_HEADER)?;
    let dt_rep = if rows.len() > 1 { rows[1][1] - rows[0][1] } else { 0.0 };
    Ok(QdyneTrace {
        counts: rows.iter().map(|r| r[3] as u64).collect(),
        p: col(&rows, 2),
        dt_rep,
    })
}

pub fn power_spectrum_csv(s: &PowerSpectrum) -> String {
    write_table(
        QDYNE_SPECTRUM_HEADER,
        (0..s.freq_hz.len()).map(|k| [num(s.freq_hz[k]), num(s.magnitude[k])]),
    )
}

pub fn read_power_spectrum_csv(text: &str) -> Result<PowerSpectrum, ExportError> {
    let rows = read_table(text, &QDYNE_SPECTRUM_HEADER)?;
    Ok(PowerSpectrum {
        freq_hz: col(&rows, 0),
        magnitude: col(&rows, 1),
    })
}

/// JSON sidecar written next to every result CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub name: String,
    pub kind: String,
    pub scale: String,
    /// Unit of the first CSV column.
    pub x_unit: String,
    pub crate_version: String,
    /// Run metadata: seeds, Monte Carlo counts, step overrides.
    pub meta: serde_json::Value,
    /// The configuration that produced the result.
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(
        name: &str,
        kind: &str,
        scale: &str,
        x_unit: &str,
        meta: &impl Serialize,
        config: &impl Serialize,
    ) -> Self {
        Provenance {
            name: name.into(),
            kind: kind.into(),
            scale: scale.into(),
            x_unit: x_unit.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            meta: serde_json::to_value(meta).expect("serializable meta"),
            config: serde_json::to_value(config).expect("serializable config"),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }
}
