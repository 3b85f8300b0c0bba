//! CSV and JSON emission. Floats are written in their shortest
//! round-trip representation so that outputs are reproducible byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lattice::FrontTrace;
use crate::sweep::SweepRecord;
use crate::wave::{ProfileGrid, ProfileSolution};

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn write_profile_csv(path: &Path, grid: &ProfileGrid) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["z", "phi1", "phi2"])?;
    for k in 0..grid.len() {
        w.write_record([
            fmt_f64(grid.z(k)),
            fmt_f64(grid.phi1[k]),
            fmt_f64(grid.phi2[k]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, trace: &FrontTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "position"])?;
    for (t, x) in trace.times.iter().zip(&trace.positions) {
        w.write_record([fmt_f64(*t), fmt_f64(*x)])?;
    }
    w.flush()?;
    Ok(())
}

pub const SWEEP_HEADER: [&str; 7] = [
    "param_value",
    "c",
    "method",
    "pinned",
    "residual_sup",
    "wall_time",
    "error",
];

pub fn sweep_csv_string(records: &[SweepRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER)?;
    for r in records {
        w.write_record([
            fmt_f64(r.param_value),
            fmt_f64(r.c),
            r.method.clone(),
            r.pinned.to_string(),
            fmt_f64(r.residual_sup),
            fmt_opt(r.wall_time),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_sweep_csv(path: &Path, records: &[SweepRecord]) -> Result<()> {
    fs::write(path, sweep_csv_string(records)?)?;
    Ok(())
}

/// Parses a sweep CSV written by [`write_sweep_csv`].
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|e| {
                crate::Error::config(
                    format!("sweep.csv column {}", SWEEP_HEADER[i]),
                    e.to_string(),
                )
            })
        };
        out.push(SweepRecord {
            param_value: num(0)?,
            c: num(1)?,
            method: row[2].to_string(),
            pinned: &row[3] == "true",
            residual_sup: num(4)?,
            wall_time: if row[5].is_empty() {
                None
            } else {
                Some(num(5)?)
            },
            error: (!row[6].is_empty()).then(|| row[6].to_string()),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub z_min: f64,
    pub z_max: f64,
    pub h: f64,
    pub nodes: usize,
}

/// Metadata written next to `profile.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionMeta {
    pub model: String,
    pub c: f64,
    pub method: String,
    pub pinned: bool,
    pub residual_sup: f64,
    pub monotone_defect: f64,
    pub limit_defect: f64,
    pub phase_level: f64,
    pub iterations: usize,
    pub grid: GridMeta,
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_richardson: Option<f64>,
}

impl SolutionMeta {
    pub fn new(model: String, sol: &ProfileSolution, c_richardson: Option<f64>) -> Self {
        let g = &sol.grid;
        Self {
            model,
            c: sol.c(),
            method: sol.method.as_str().to_string(),
            pinned: sol.pinned,
            residual_sup: sol.residual_sup,
            monotone_defect: sol.monotone_defect,
            limit_defect: g.limit_defect(),
            phase_level: sol.phase_level,
            iterations: sol.iterations,
            grid: GridMeta {
                z_min: g.z_min,
                z_max: g.z_max,
                h: g.h,
                nodes: g.len(),
            },
            note: sol.note.clone(),
            c_richardson,
        }
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
