//! Parameter sweeps of the wave velocity.
//!
//! The grid is cut into fixed blocks of [`BLOCK`] consecutive points. Each
//! block is solved by one worker: a cold solve at its first point, then
//! natural continuation through the rest. Because the partition does not
//! depend on the worker count, neither does the output.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelDescriptor;
use crate::wave::{continue_step, solve_wave, ProfileSolution, WaveError, WaveOptions};
use crate::PINNING_THRESHOLD;

pub const BLOCK: usize = 8;
pub const THREADS_ENV: &str = "FKWAVES_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub param_value: f64,
    pub c: f64,
    pub method: String,
    pub pinned: bool,
    pub residual_sup: f64,
    pub wall_time: Option<f64>,
    pub error: Option<String>,
}

impl SweepRecord {
    fn from_solution(v: f64, sol: &ProfileSolution, wall: Option<f64>) -> Self {
        Self {
            param_value: v,
            c: sol.c(),
            method: sol.method.as_str().to_string(),
            pinned: sol.c().abs() < PINNING_THRESHOLD,
            residual_sup: sol.residual_sup,
            wall_time: wall,
            error: None,
        }
    }

    fn failure(v: f64, err: &WaveError, wall: Option<f64>) -> Self {
        Self {
            param_value: v,
            c: f64::NAN,
            method: "failed".into(),
            pinned: false,
            residual_sup: f64::NAN,
            wall_time: wall,
            error: Some(err.to_string()),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.error.is_none() && self.c.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: String,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    pub workers: usize,
    /// Walk each block from its largest value down.
    pub reverse: bool,
    pub timings: bool,
}

/// Grid `start, start + step, .., ≤ stop`, rounded to 12 decimals so that
/// values print as written.
pub fn grid_values(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
        .collect()
}

/// Worker count after the `FKWAVES_THREADS` cap.
pub fn effective_workers(requested: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    cap.map_or(requested, |c| requested.min(c)).max(1)
}

fn run_block(
    base: &ModelDescriptor,
    param: &str,
    values: &[f64],
    reverse: bool,
    opts: &WaveOptions,
    timings: bool,
) -> Vec<SweepRecord> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    if reverse {
        order.reverse();
    }
    let mut out: Vec<Option<SweepRecord>> = vec![None; values.len()];
    let mut prev: Option<ProfileSolution> = None;
    for i in order {
        let v = values[i];
        let t0 = Instant::now();
        let res = base
            .with_param(param, v)
            .map_err(WaveError::from)
            .and_then(|m| match &prev {
                Some(p) => continue_step(&m, p, opts),
                None => solve_wave(&m, opts),
            });
        let wall = timings.then(|| t0.elapsed().as_secs_f64());
        out[i] = Some(match &res {
            Ok(sol) => SweepRecord::from_solution(v, sol, wall),
            Err(e) => SweepRecord::failure(v, e, wall),
        });
        prev = res.ok();
    }
    out.into_iter()
        .map(|r| r.expect("every point visited"))
        .collect()
}

/// Midpoint between the last pinned and the first depinned grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepinningThreshold {
    pub value: f64,
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub threshold: Option<DepinningThreshold>,
}

pub fn depinning_threshold(records: &[SweepRecord], step: f64) -> Option<DepinningThreshold> {
    let valid: Vec<&SweepRecord> = records.iter().filter(|r| r.is_valid()).collect();
    valid.windows(2).find_map(|w| {
        (w[0].pinned && !w[1].pinned).then(|| DepinningThreshold {
            value: 0.5 * (w[0].param_value + w[1].param_value),
            uncertainty: step,
        })
    })
}

pub fn run_sweep(
    base: &ModelDescriptor,
    spec: &SweepSpec,
    opts: &WaveOptions,
) -> Result<SweepResult> {
    if !(spec.step > 0.0 && spec.step.is_finite()) {
        return Err(Error::config("sweep.step", "must be > 0"));
    }
    base.with_param(&spec.param, spec.start)?;
    let values = grid_values(spec.start, spec.stop, spec.step);
    let blocks: Vec<&[f64]> = values.chunks(BLOCK).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(effective_workers(spec.workers))
        .build()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let per_block: Vec<Vec<SweepRecord>> = pool.install(|| {
        blocks
            .par_iter()
            .map(|b| run_block(base, &spec.param, b, spec.reverse, opts, spec.timings))
            .collect()
    });
    let records: Vec<SweepRecord> = per_block.into_iter().flatten().collect();
    let threshold = depinning_threshold(&records, spec.step);
    Ok(SweepResult { records, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(v: f64, c: f64) -> SweepRecord {
        SweepRecord {
            param_value: v,
            c,
            method: "x".into(),
            pinned: c.abs() < PINNING_THRESHOLD,
            residual_sup: 0.0,
            wall_time: None,
            error: None,
        }
    }

    #[test]
    fn grid_values_print_cleanly() {
        let g = grid_values(0.0, 0.3, 0.01);
        assert_eq!(g.len(), 31);
        assert_eq!(g[7], 0.07);
        assert_eq!(g[30], 0.3);
        assert_eq!(grid_values(0.2, 0.2, 0.05), vec![0.2]);
    }

    #[test]
    fn threshold_is_midpoint() {
        let rows = vec![
            rec(0.0, 0.0),
            rec(0.1, 0.0),
            rec(0.2, -0.5),
            rec(0.3, f64::NAN),
        ];
        let t = depinning_threshold(&rows, 0.1).unwrap();
        assert!((t.value - 0.15).abs() < 1e-15);
        assert_eq!(t.uncertainty, 0.1);
        assert!(depinning_threshold(&rows[..2], 0.1).is_none());
    }

    #[test]
    fn failures_stay_in_row() {
        let base = ModelDescriptor::classical_fk(0.0, 0.005).unwrap();
        let spec = SweepSpec {
            param: "L".into(),
            start: 0.26,
            stop: 0.28,
            step: 0.01,
            workers: 2,
            reverse: false,
            timings: false,
        };
        let r = run_sweep(&base, &spec, &WaveOptions::default()).unwrap();
        assert_eq!(r.records.len(), 3);
        assert!(r.records.iter().all(|x| x.c.is_nan() && x.error.is_some()));
    }
}
