use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use fkwaves::config::RunConfig;
use fkwaves::lattice::{init_front, measure_velocity, simulate, BoundaryMode, SimOptions};
use fkwaves::model::check_assumptions;
use fkwaves::output::{
    write_json, write_profile_csv, write_sweep_csv, write_trace_csv, SolutionMeta,
};
use fkwaves::sweep::{run_sweep, SweepSpec};
use fkwaves::verify::{any_failure, run_suite, summary};
use fkwaves::wave::{gate, hull_extrapolate, richardson_velocity, solve_wave, track_front};
use fkwaves::{Error, ModelDescriptor, Result};

const ASSUMPTION_GRID: usize = 64;

#[derive(Parser)]
#[command(
    name = "fkwaves",
    version,
    about = "Traveling waves of damped-inertial Frenkel-Kontorova lattices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the sweep worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Record wall-clock times in outputs (breaks byte reproducibility).
    #[arg(long)]
    timings: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural assumptions of the configured model.
    CheckModel(Common),
    /// Integrate the lattice and track the front.
    Simulate(Common),
    /// Solve for the traveling-wave profile.
    Wave {
        #[command(flatten)]
        common: Common,
        /// Also report the velocity extrapolated over h, h/2, h/4.
        #[arg(long)]
        refine: bool,
    },
    /// Rotation-number velocities on helical chains, extrapolated in 1/M.
    Hull(Common),
    /// Velocity across a parameter range.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Walk each block from its largest parameter value down.
        #[arg(long)]
        reverse: bool,
    },
    /// Run the property-check suite.
    Verify(Common),
}

enum Outcome {
    Ok,
    Failed,
}

fn load(common: &Common) -> Result<(RunConfig, ModelDescriptor)> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        if w == 0 {
            return Err(Error::config("--workers", "must be ≥ 1"));
        }
        if let Some(sw) = cfg.sweep.as_mut() {
            sw.workers = w;
        }
    }
    let model = cfg.model()?;
    fs::create_dir_all(&common.out)?;
    Ok((cfg, model))
}

/// Writes all files or none.
fn write_all(files: &[&Path], write: impl FnOnce() -> Result<()>) -> Result<()> {
    let r = write();
    if r.is_err() {
        for f in files {
            let _ = fs::remove_file(f);
        }
    }
    r
}

fn check_model(common: &Common) -> Result<Outcome> {
    let (_, model) = load(common)?;
    let report = check_assumptions(&model, ASSUMPTION_GRID)?;
    println!("model: {}", model.describe());
    let cmp = if report.gate_a() { ">" } else { "<=" };
    let status = if report.gate_a() { "OK" } else { "FAIL" };
    println!(
        "alpha0={} {cmp} alpha*≈{:.3}: {status}",
        report.alpha0, report.alpha_star
    );
    println!("monV0_margin = {:.6}", report.monv0_margin);
    println!("offdiag_monotone = {}", report.offdiag_monotone);
    match (report.b, report.fprime_b) {
        (Some(b), Some(d)) => println!("b = {b}, f'(b) = {d:.6}"),
        _ => println!(
            "no interior zero: {}",
            report.bistable_error.as_deref().unwrap_or("unknown")
        ),
    }
    println!("sign_pattern_ok = {}", report.sign_pattern_ok);
    println!("beta0 = {:.4}", report.beta0);
    println!(
        "dplus_strict = {}, dminus_strict = {}, shifts = {:?}",
        report.dplus_strict, report.dminus_strict, report.same_sign_shifts
    );
    write_json(&common.out.join("assumptions.json"), &report)?;
    Ok(if report.gate_a() && report.gate_b() {
        Outcome::Ok
    } else {
        Outcome::Failed
    })
}

fn simulate_cmd(common: &Common) -> Result<Outcome> {
    let (cfg, model) = load(common)?;
    let level = gate(&model)?;
    let run = cfg.lattice_run();
    let (trace, fit) = match cfg.lattice.boundary {
        BoundaryMode::FixedFront => {
            let fr = track_front(&model, &run, level, None)?;
            (fr.output.trace, fr.fit)
        }
        BoundaryMode::Helical => {
            let mut state = init_front(run.m, run.init);
            state.boundary = BoundaryMode::Helical;
            let dt = run.dt.unwrap_or_else(|| model.dt_max());
            let mut opts = SimOptions::new(run.t_end, dt, level);
            opts.sample_every = ((run.t_end / dt) as usize / 2000).max(1);
            let out = simulate(&model, state, &opts)?;
            let fit = measure_velocity(&out.trace, 0.5)?;
            (out.trace, fit)
        }
    };
    let path = common.out.join("trace.csv");
    write_all(&[&path], || write_trace_csv(&path, &trace))?;
    if fit.pinned() {
        println!("pinned: c = {:e}, r2 = {:.6}", fit.c, fit.r2);
    } else {
        println!("c = {:.9}, r2 = {:.6}", fit.c, fit.r2);
    }
    Ok(Outcome::Ok)
}

fn wave_cmd(common: &Common, refine: bool) -> Result<Outcome> {
    let (cfg, model) = load(common)?;
    let opts = cfg.wave_options();
    let sol = solve_wave(&model, &opts)?;
    let c_ref = if refine {
        Some(richardson_velocity(&model, &sol, opts.tol, opts.max_iter, opts.tau_max)?.c)
    } else {
        None
    };
    let profile = common.out.join("profile.csv");
    let meta_path = common.out.join("solution.json");
    let meta = SolutionMeta::new(model.describe(), &sol, c_ref);
    write_all(&[&profile, &meta_path], || {
        write_profile_csv(&profile, &sol.grid)?;
        write_json(&meta_path, &meta)
    })?;
    let label = if sol.pinned { " (pinned)" } else { "" };
    println!(
        "c = {:.9}{label}, method = {}",
        sol.c(),
        sol.method.as_str()
    );
    if let Some(c) = c_ref {
        println!("c (extrapolated in h) = {c:.9}");
    }
    println!("residual_sup = {:e}", sol.residual_sup);
    Ok(Outcome::Ok)
}

fn hull_cmd(common: &Common) -> Result<Outcome> {
    let (cfg, model) = load(common)?;
    let dt = cfg.lattice.dt.unwrap_or_else(|| model.dt_max());
    let hull = hull_extrapolate(&model, &cfg.verify.hull_m, cfg.verify.hull_t, dt)?;
    for (m, c) in &hull.table {
        println!("M = {m:5}  c_p = {c:.9}");
    }
    println!("c_limit = {:.9}", hull.c_limit);
    if let Some(w) = &hull.warning {
        println!("warning: {w}");
    }
    write_json(&common.out.join("hull.json"), &hull)?;
    Ok(Outcome::Ok)
}

fn sweep_cmd(common: &Common, reverse: bool) -> Result<Outcome> {
    let (cfg, model) = load(common)?;
    let sw = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::config("sweep", "the sweep block is required"))?;
    let spec = SweepSpec {
        param: sw.param.clone(),
        start: sw.start,
        stop: sw.stop,
        step: sw.step,
        workers: sw.workers,
        reverse: reverse || sw.reverse,
        timings: common.timings,
    };
    let result = run_sweep(&model, &spec, &cfg.wave_options())?;
    let csv = common.out.join("sweep.csv");
    let summary_path = common.out.join("sweep.json");
    let failed = result.records.iter().filter(|r| !r.is_valid()).count();
    write_all(&[&csv, &summary_path], || {
        write_sweep_csv(&csv, &result.records)?;
        write_json(
            &summary_path,
            &json!({
                "param": spec.param,
                "points": result.records.len(),
                "failed_points": failed,
                "threshold": result.threshold,
            }),
        )
    })?;
    match result.threshold {
        Some(t) => println!("{}_c = {} ± {}", spec.param, t.value, t.uncertainty),
        None => println!("no pinned-to-depinned transition on this grid"),
    }
    println!("{} points, {failed} failed", result.records.len());
    Ok(Outcome::Ok)
}

fn verify_cmd(common: &Common) -> Result<Outcome> {
    let (cfg, model) = load(common)?;
    let reports = run_suite(&model, &cfg.suite_config(common.timings));
    write_json(&common.out.join("report.json"), &reports)?;
    for r in &reports {
        let status = match (&r.skipped, r.passed) {
            (Some(why), _) => format!("SKIP ({why})"),
            (None, true) => "PASS".into(),
            (None, false) => "FAIL".into(),
        };
        println!(
            "{:<24} {status}  worst={:e} tol={:e}",
            r.name, r.worst_violation, r.tolerance
        );
    }
    println!("{}", summary(&reports));
    Ok(if any_failure(&reports) {
        Outcome::Failed
    } else {
        Outcome::Ok
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::CheckModel(c) => check_model(c),
        Command::Simulate(c) => simulate_cmd(c),
        Command::Wave { common, refine } => wave_cmd(common, *refine),
        Command::Hull(c) => hull_cmd(c),
        Command::Sweep { common, reverse } => sweep_cmd(common, *reverse),
        Command::Verify(c) => verify_cmd(c),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
