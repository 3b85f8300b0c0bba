//! Finite chains of the monotone `(u, Ξ)` system.
//!
//! Two boundary modes are supported. `FixedFront` pads the chain with ghost
//! values 0 on the left and 1 on the right, which is what a heteroclinic
//! front sees far from its core. `Helical` closes the chain with
//! `u_{i+M} = u_i + 1`, a configuration of slope `1/M` whose mean drift is
//! the rotation number.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_extension, ModelDescriptor, ModelError};

/// Sites kept between the front and either end of a fixed-front chain.
pub const BOUNDARY_GUARD: usize = 50;

const MONOTONE_TOL: f64 = 1e-8;
const MIN_TRACE_SAMPLES: usize = 50;
const ROTATION_CONVERGENCE_TOL: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("lattice evaluation needs integer shifts, got {0:?}")]
    NonIntegerStencil(Vec<f64>),

    #[error("solution blew up at t = {t}: non-finite value at site {index}")]
    BlowUp { t: f64, index: usize },

    #[error("dt = {dt} exceeds the stability bound dt_max = 0.5/alpha0 = {dt_max}")]
    StepTooLarge { dt: f64, dt_max: f64 },

    #[error("invalid lattice state: {0}")]
    InvalidState(String),

    #[error("no level crossing: the chain has no front at level {level}")]
    NoFront { level: f64 },

    #[error("front is not monotone: u decreases by more than 1e-8 at site {index}")]
    NonMonotoneFront { index: usize },

    #[error("front reached site {position} at t = {t}, within {guard} sites of the chain end")]
    BoundaryContamination { t: f64, position: f64, guard: usize },

    #[error("need at least {needed} trace samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("rotation number not converged: successive window averages {a1} and {a2}")]
    Convergence { a1: f64, a2: f64 },

    #[error("helical chains need a diagonal-periodic F")]
    NotPeriodic,
}

type LatticeResult<T> = std::result::Result<T, LatticeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    FixedFront,
    Helical,
}

/// Positions `u_i` and auxiliary variables `Ξ_i = u_i + 2 m0 du_i/dt`.
///
/// `offset` is the absolute index of site 0; fixed-front chains are
/// recentred on the front during long runs, which shifts the window.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    pub t: f64,
    pub u: Vec<f64>,
    pub xi: Vec<f64>,
    pub boundary: BoundaryMode,
    pub offset: i64,
}

impl LatticeState {
    pub fn new(u: Vec<f64>, xi: Vec<f64>, boundary: BoundaryMode) -> LatticeResult<Self> {
        if u.len() != xi.len() {
            return Err(LatticeError::InvalidState(format!(
                "u has {} sites but xi has {}",
                u.len(),
                xi.len()
            )));
        }
        if u.is_empty() {
            return Err(LatticeError::InvalidState("empty chain".into()));
        }
        if let Some(i) = u.iter().chain(&xi).position(|v| !v.is_finite()) {
            return Err(LatticeError::InvalidState(format!(
                "non-finite entry at {i}"
            )));
        }
        Ok(Self {
            t: 0.0,
            u,
            xi,
            boundary,
            offset: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// `u` at a possibly out-of-range index, resolved by the boundary mode.
    #[inline]
    pub fn u_at(&self, j: isize) -> f64 {
        ghost(&self.u, j, self.boundary)
    }

    /// Mean position `(1/M) Σ u_i`.
    pub fn mean_u(&self) -> f64 {
        self.u.iter().sum::<f64>() / self.u.len() as f64
    }

    fn check_size(&self, offsets: &[isize]) -> LatticeResult<()> {
        let r = offsets.iter().map(|o| o.unsigned_abs()).max().unwrap_or(0);
        let min = 3 * r + 3;
        if self.len() < min {
            return Err(LatticeError::InvalidState(format!(
                "chain of {} sites is shorter than 3 max|r| + 3 = {min}",
                self.len()
            )));
        }
        Ok(())
    }
}

#[inline]
fn ghost(u: &[f64], j: isize, mode: BoundaryMode) -> f64 {
    let m = u.len() as isize;
    match mode {
        BoundaryMode::FixedFront => {
            if j < 0 {
                0.0
            } else if j >= m {
                1.0
            } else {
                u[j as usize]
            }
        }
        BoundaryMode::Helical => {
            let w = j.div_euclid(m);
            u[j.rem_euclid(m) as usize] + w as f64
        }
    }
}

/// Initial data for front and helical runs. `Ξ = u`, i.e. the particles
/// start at rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStyle {
    Step,
    Tanh,
    LinearSlope,
}

pub fn init_front(m: usize, style: InitStyle) -> LatticeState {
    let half = m / 2;
    let u: Vec<f64> = match style {
        InitStyle::Step => (0..m).map(|i| if i < half { 0.0 } else { 1.0 }).collect(),
        InitStyle::Tanh => (0..m)
            .map(|i| 0.5 * (1.0 + ((i as f64 - m as f64 / 2.0) / 4.0).tanh()))
            .collect(),
        InitStyle::LinearSlope => (0..m).map(|i| i as f64 / m as f64).collect(),
    };
    let boundary = match style {
        InitStyle::LinearSlope => BoundaryMode::Helical,
        _ => BoundaryMode::FixedFront,
    };
    LatticeState {
        t: 0.0,
        xi: u.clone(),
        u,
        boundary,
        offset: 0,
    }
}

fn integer_offsets(model: &ModelDescriptor) -> LatticeResult<Vec<isize>> {
    model
        .stencil()
        .integer_offsets()
        .ok_or_else(|| LatticeError::NonIntegerStencil(model.stencil().shifts().to_vec()))
}

/// Right-hand side evaluator with scratch space for one chain.
pub struct LatticeRhs<'a> {
    model: &'a ModelDescriptor,
    offsets: Vec<isize>,
    args: Vec<f64>,
}

impl<'a> LatticeRhs<'a> {
    pub fn new(model: &'a ModelDescriptor) -> LatticeResult<Self> {
        let offsets = integer_offsets(model)?;
        let args = vec![0.0; offsets.len()];
        Ok(Self {
            model,
            offsets,
            args,
        })
    }

    /// Writes `du/dt` and `dΞ/dt` for the chain `(u, xi)`.
    pub fn eval(
        &mut self,
        u: &[f64],
        xi: &[f64],
        boundary: BoundaryMode,
        du: &mut [f64],
        dxi: &mut [f64],
    ) -> LatticeResult<()> {
        let alpha0 = self.model.alpha0();
        let nl = self.model.nonlinearity();
        for i in 0..u.len() {
            for (a, &o) in self.args.iter_mut().zip(&self.offsets) {
                *a = ghost(u, i as isize + o, boundary);
            }
            let f = nl.eval_in_box(&self.args)?;
            let relax = alpha0 * (xi[i] - u[i]);
            du[i] = relax;
            dxi[i] = 2.0 * f - relax;
        }
        Ok(())
    }

    /// `Σ_i F` at the current state; used by the drift identity
    /// `d/dt Σ (u_i + Ξ_i) = 2 Σ_i F`.
    pub fn sum_f(&mut self, u: &[f64], boundary: BoundaryMode) -> LatticeResult<f64> {
        let nl = self.model.nonlinearity();
        let mut s = 0.0;
        for i in 0..u.len() {
            for (a, &o) in self.args.iter_mut().zip(&self.offsets) {
                *a = ghost(u, i as isize + o, boundary);
            }
            s += nl.eval_in_box(&self.args)?;
        }
        Ok(s)
    }
}

/// Exact right-hand side of the monotone system at `state`.
pub fn rhs(state: &LatticeState, model: &ModelDescriptor) -> LatticeResult<(Vec<f64>, Vec<f64>)> {
    let mut ev = LatticeRhs::new(model)?;
    let mut du = vec![0.0; state.len()];
    let mut dxi = vec![0.0; state.len()];
    ev.eval(&state.u, &state.xi, state.boundary, &mut du, &mut dxi)?;
    Ok((du, dxi))
}

/// Classical four-stage Runge-Kutta stepper owning its stage buffers.
pub struct Rk4<'a> {
    rhs: LatticeRhs<'a>,
    dt_max: f64,
    k: [Vec<f64>; 8],
    tu: Vec<f64>,
    txi: Vec<f64>,
}

impl<'a> Rk4<'a> {
    pub fn new(model: &'a ModelDescriptor, sites: usize) -> LatticeResult<Self> {
        Ok(Self {
            rhs: LatticeRhs::new(model)?,
            dt_max: model.dt_max(),
            k: std::array::from_fn(|_| vec![0.0; sites]),
            tu: vec![0.0; sites],
            txi: vec![0.0; sites],
        })
    }

    pub fn dt_max(&self) -> f64 {
        self.dt_max
    }

    pub fn step(&mut self, state: &mut LatticeState, dt: f64) -> LatticeResult<()> {
        if !(dt > 0.0) || dt > self.dt_max * (1.0 + 1e-12) {
            return Err(LatticeError::StepTooLarge {
                dt,
                dt_max: self.dt_max,
            });
        }
        let n = state.len();
        if self.tu.len() != n {
            *self = Self {
                rhs: LatticeRhs {
                    model: self.rhs.model,
                    offsets: std::mem::take(&mut self.rhs.offsets),
                    args: std::mem::take(&mut self.rhs.args),
                },
                dt_max: self.dt_max,
                k: std::array::from_fn(|_| vec![0.0; n]),
                tu: vec![0.0; n],
                txi: vec![0.0; n],
            };
        }
        let bd = state.boundary;
        let [k1u, k1x, k2u, k2x, k3u, k3x, k4u, k4x] = &mut self.k;
        self.rhs.eval(&state.u, &state.xi, bd, k1u, k1x)?;
        for i in 0..n {
            self.tu[i] = state.u[i] + 0.5 * dt * k1u[i];
            self.txi[i] = state.xi[i] + 0.5 * dt * k1x[i];
        }
        self.rhs.eval(&self.tu, &self.txi, bd, k2u, k2x)?;
        for i in 0..n {
            self.tu[i] = state.u[i] + 0.5 * dt * k2u[i];
            self.txi[i] = state.xi[i] + 0.5 * dt * k2x[i];
        }
        self.rhs.eval(&self.tu, &self.txi, bd, k3u, k3x)?;
        for i in 0..n {
            self.tu[i] = state.u[i] + dt * k3u[i];
            self.txi[i] = state.xi[i] + dt * k3x[i];
        }
        self.rhs.eval(&self.tu, &self.txi, bd, k4u, k4x)?;
        let w = dt / 6.0;
        for i in 0..n {
            state.u[i] += w * (k1u[i] + 2.0 * k2u[i] + 2.0 * k3u[i] + k4u[i]);
            state.xi[i] += w * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
        }
        state.t += dt;
        if let Some(index) = (0..n).find(|&i| !(state.u[i].is_finite() && state.xi[i].is_finite()))
        {
            return Err(LatticeError::BlowUp { t: state.t, index });
        }
        Ok(())
    }
}

/// One RK4 step of size `dt` (at most `0.5/α0`).
pub fn step_rk4(
    state: &LatticeState,
    model: &ModelDescriptor,
    dt: f64,
) -> LatticeResult<LatticeState> {
    let mut out = state.clone();
    Rk4::new(model, state.len())?.step(&mut out, dt)?;
    Ok(out)
}

/// Real-valued position where the chain crosses `level`, by linear
/// interpolation. Includes the window offset. On helical chains the
/// position is unwrapped with the winding count so that it moves
/// continuously in time.
pub fn front_position(state: &LatticeState, level: f64) -> LatticeResult<f64> {
    let u = &state.u;
    let m = u.len();
    for i in 1..m {
        if u[i] - u[i - 1] < -MONOTONE_TOL {
            return Err(LatticeError::NonMonotoneFront { index: i });
        }
    }
    match state.boundary {
        BoundaryMode::FixedFront => {
            if u[0] >= level || u[m - 1] < level {
                return Err(LatticeError::NoFront { level });
            }
            let j = u.iter().position(|&v| v >= level).expect("crossing exists");
            let frac = (level - u[j - 1]) / (u[j] - u[j - 1]);
            Ok(state.offset as f64 + (j - 1) as f64 + frac)
        }
        BoundaryMode::Helical => {
            if u[0] + 1.0 - u[m - 1] < -MONOTONE_TOL {
                return Err(LatticeError::NonMonotoneFront { index: 0 });
            }
            let winding = (u[0] - level).ceil();
            let target = level + winding;
            let value = |j: usize| if j == m { u[0] + 1.0 } else { u[j] };
            if u[0] >= target {
                return Ok(-winding * m as f64);
            }
            let j = (1..=m)
                .find(|&j| value(j) >= target)
                .expect("crossing exists");
            let frac = (target - value(j - 1)) / (value(j) - value(j - 1));
            Ok((j - 1) as f64 + frac - winding * m as f64)
        }
    }
}

/// Level crossings sampled along a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrontTrace {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub level: f64,
}

impl FrontTrace {
    pub fn new(level: f64) -> Self {
        Self {
            times: Vec::new(),
            positions: Vec::new(),
            level,
        }
    }

    pub fn push(&mut self, t: f64, x: f64) {
        self.times.push(t);
        self.positions.push(x);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Least-squares fit of the front position against time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityFit {
    /// Wave velocity in the `u_i(t) = φ(i + c t)` convention, `c = −drift`.
    pub c: f64,
    /// Slope of the crossing position in sites per unit time.
    pub drift: f64,
    pub r2: f64,
    /// `r2 ≥ 0.99`, or the front is pinned.
    pub reliable: bool,
}

impl VelocityFit {
    pub fn pinned(&self) -> bool {
        self.c.abs() < crate::PINNING_THRESHOLD
    }
}

/// Fits the trailing `window` fraction of `trace`.
pub fn measure_velocity(trace: &FrontTrace, window: f64) -> LatticeResult<VelocityFit> {
    let n = trace.len();
    if n < MIN_TRACE_SAMPLES {
        return Err(LatticeError::InsufficientData {
            needed: MIN_TRACE_SAMPLES,
            got: n,
        });
    }
    let window = window.clamp(f64::MIN_POSITIVE, 1.0);
    let start = n - ((n as f64 * window).ceil() as usize).clamp(2, n);
    let ts = &trace.times[start..];
    let xs = &trace.positions[start..];
    let k = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / k;
    let xm = xs.iter().sum::<f64>() / k;
    let (mut stt, mut stx, mut sxx) = (0.0, 0.0, 0.0);
    for (t, x) in ts.iter().zip(xs) {
        let (dt, dx) = (t - tm, x - xm);
        stt += dt * dt;
        stx += dt * dx;
        sxx += dx * dx;
    }
    let drift = if stt > 0.0 { stx / stt } else { 0.0 };
    let ss_res: f64 = ts
        .iter()
        .zip(xs)
        .map(|(t, x)| {
            let e = x - (xm + drift * (t - tm));
            e * e
        })
        .sum();
    let r2 = if sxx > 0.0 { 1.0 - ss_res / sxx } else { 1.0 };
    let c = if drift == 0.0 { 0.0 } else { -drift };
    Ok(VelocityFit {
        c,
        drift,
        r2,
        reliable: r2 >= 0.99 || c.abs() < crate::PINNING_THRESHOLD,
    })
}

/// Full copy of the chain at one output time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub offset: i64,
    pub u: Vec<f64>,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Level whose crossing is tracked; usually the interior zero `b`.
    pub level: f64,
    /// Steps between front samples.
    pub sample_every: usize,
    /// Shift fixed-front windows to keep the front centred instead of
    /// aborting when it comes within [`BOUNDARY_GUARD`] sites of an end.
    pub recenter: bool,
    /// Record full snapshots every `snapshot_every` steps from `snapshot_from`.
    pub snapshot_every: Option<usize>,
    pub snapshot_from: f64,
}

impl SimOptions {
    pub fn new(t_end: f64, dt: f64, level: f64) -> Self {
        Self {
            t_end,
            dt,
            level,
            sample_every: 20,
            recenter: true,
            snapshot_every: None,
            snapshot_from: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub state: LatticeState,
    pub trace: FrontTrace,
    pub snapshots: Vec<Snapshot>,
}

fn recenter(state: &mut LatticeState, local: f64) {
    let m = state.len();
    let shift = (local - m as f64 / 2.0).round() as isize;
    if shift == 0 {
        return;
    }
    let old_u = state.u.clone();
    let old_xi = state.xi.clone();
    for j in 0..m {
        let src = j as isize + shift;
        let (u, xi) = if src < 0 {
            (0.0, 0.0)
        } else if src >= m as isize {
            (1.0, 1.0)
        } else {
            (old_u[src as usize], old_xi[src as usize])
        };
        state.u[j] = u;
        state.xi[j] = xi;
    }
    state.offset += shift as i64;
}

/// Integrates `init` to `t_end`, sampling the front every `sample_every`
/// steps. The step is shrunk so that an integer number of steps hits
/// `t_end` exactly.
pub fn simulate(
    model: &ModelDescriptor,
    init: LatticeState,
    opts: &SimOptions,
) -> LatticeResult<SimOutput> {
    let offsets = integer_offsets(model)?;
    init.check_size(&offsets)?;
    if init.boundary == BoundaryMode::Helical {
        check_periodic(model)?;
    }
    if opts.dt > model.dt_max() * (1.0 + 1e-12) || !(opts.dt > 0.0) {
        return Err(LatticeError::StepTooLarge {
            dt: opts.dt,
            dt_max: model.dt_max(),
        });
    }
    let steps = ((opts.t_end / opts.dt) - 1e-9).ceil().max(1.0) as usize;
    let dt = opts.t_end / steps as f64;
    let t0 = init.t;
    let mut state = init;
    let mut stepper = Rk4::new(model, state.len())?;
    let mut trace = FrontTrace::new(opts.level);
    let mut snapshots = Vec::new();
    let every = opts.sample_every.max(1);

    let observe = |state: &mut LatticeState,
                   trace: &mut FrontTrace,
                   snapshots: &mut Vec<Snapshot>,
                   k: usize|
     -> LatticeResult<()> {
        if let Some(se) = opts.snapshot_every {
            if k.is_multiple_of(se.max(1)) && state.t >= opts.snapshot_from - 1e-12 {
                snapshots.push(Snapshot {
                    t: state.t,
                    offset: state.offset,
                    u: state.u.clone(),
                    xi: state.xi.clone(),
                });
            }
        }
        if !k.is_multiple_of(every) {
            return Ok(());
        }
        let x = front_position(state, opts.level)?;
        trace.push(state.t, x);
        if state.boundary == BoundaryMode::FixedFront {
            let local = x - state.offset as f64;
            let m = state.len() as f64;
            let guard = BOUNDARY_GUARD as f64;
            if local < guard || local > m - 1.0 - guard {
                if opts.recenter && state.len() > 2 * BOUNDARY_GUARD + 2 {
                    recenter(state, local);
                } else {
                    return Err(LatticeError::BoundaryContamination {
                        t: state.t,
                        position: x,
                        guard: BOUNDARY_GUARD,
                    });
                }
            }
        }
        Ok(())
    };

    observe(&mut state, &mut trace, &mut snapshots, 0)?;
    for k in 1..=steps {
        stepper.step(&mut state, dt)?;
        state.t = t0 + k as f64 * dt;
        observe(&mut state, &mut trace, &mut snapshots, k)?;
    }
    Ok(SimOutput {
        state,
        trace,
        snapshots,
    })
}

fn check_periodic(model: &ModelDescriptor) -> LatticeResult<()> {
    match validate_extension(model.nonlinearity(), 64, 0) {
        Ok(true) => Ok(()),
        Ok(false) | Err(ModelError::ExtensionMissing) => Err(LatticeError::NotPeriodic),
        Err(e) => Err(e.into()),
    }
}

/// Rotation number of a helical chain of `M` sites (slope `p = 1/M`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    pub m: usize,
    /// Mean drift `λ_p` of the particles.
    pub lambda_p: f64,
    /// `c_p = λ_p / p = M λ_p`.
    pub c_p: f64,
    /// Plain trailing-half average of `(1/M) Σ du_i/dt`.
    pub lambda_cesaro: f64,
    /// Averages over the two halves of the trailing window.
    pub window_averages: (f64, f64),
    /// Whole-site shifts of the configuration used by the period-aligned
    /// estimate (0 when pinned or too slow to complete one).
    pub windings: i64,
}

/// Time-averaged drift on a helical chain started from `u_i = i/M`.
///
/// On the attracting hull-function orbit the configuration at time
/// `t + 1/|c_p|` is the one at `t` shifted by one site, so the mean position
/// gains exactly `±1/M` per period. The estimate measures the time taken by
/// a whole number of such shifts inside the trailing half, which removes the
/// oscillatory error of the plain Cesàro average.
pub fn rotation_number(
    model: &ModelDescriptor,
    m: usize,
    t_end: f64,
    dt: f64,
) -> LatticeResult<RotationEstimate> {
    let offsets = integer_offsets(model)?;
    check_periodic(model)?;
    let mut state = init_front(m, InitStyle::LinearSlope);
    state.check_size(&offsets)?;
    let steps = ((t_end / dt) - 1e-9).ceil().max(4.0) as usize;
    let dt = t_end / steps as f64;
    let mut stepper = Rk4::new(model, m)?;
    let mut mean = Vec::with_capacity(steps + 1);
    mean.push(state.mean_u());
    for k in 1..=steps {
        stepper.step(&mut state, dt)?;
        state.t = k as f64 * dt;
        mean.push(state.mean_u());
    }
    let half = steps / 2;
    let three_q = (3 * steps) / 4;
    let avg = |a: usize, b: usize| (mean[b] - mean[a]) / ((b - a) as f64 * dt);
    let a1 = avg(half, three_q);
    let a2 = avg(three_q, steps);
    let lambda_cesaro = avg(half, steps);
    if (a1 - a2).abs() >= ROTATION_CONVERGENCE_TOL {
        return Err(LatticeError::Convergence { a1, a2 });
    }

    let p = 1.0 / m as f64;
    let start = mean[half];
    let gained = mean[steps] - start;
    let windings = (gained / p).trunc() as i64;
    let mut lambda_p = lambda_cesaro;
    if windings != 0 {
        let target = start + windings as f64 * p;
        let up = windings > 0;
        let crossing = (half + 1..=steps).find(|&k| {
            if up {
                mean[k] >= target
            } else {
                mean[k] <= target
            }
        });
        if let Some(k) = crossing {
            let frac = (target - mean[k - 1]) / (mean[k] - mean[k - 1]);
            let t_cross = ((k - 1) as f64 + frac) * dt;
            let t_start = half as f64 * dt;
            lambda_p = windings as f64 * p / (t_cross - t_start);
        }
    }
    Ok(RotationEstimate {
        m,
        lambda_p,
        c_p: lambda_p * m as f64,
        lambda_cesaro,
        window_averages: (a1, a2),
        windings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CustomRule, Extension};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn constant_force(g0: f64, m0: f64) -> ModelDescriptor {
        let rule = CustomRule::new("constant", 3, Extension::DiagonalPeriodic, move |_| g0);
        ModelDescriptor::custom(rule, vec![0.0, 1.0, -1.0], m0).unwrap()
    }

    fn fk(l: f64) -> ModelDescriptor {
        ModelDescriptor::classical_fk(l, 0.005).unwrap()
    }

    #[test]
    fn rhs_vanishes_at_zero_phase() {
        let s = LatticeState::new(vec![0.0; 10], vec![0.0; 10], BoundaryMode::FixedFront).unwrap();
        let (du, dxi) = rhs(&s, &fk(0.0)).unwrap();
        // the last site sees the right ghost 1
        assert!(du.iter().chain(&dxi[..9]).all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn rhs_constant_force_drift() {
        let model = constant_force(0.3, 0.005);
        let a0 = model.alpha0();
        let s =
            LatticeState::new(vec![0.0; 8], vec![0.3 / a0; 8], BoundaryMode::FixedFront).unwrap();
        let (du, dxi) = rhs(&s, &model).unwrap();
        for (a, b) in du.iter().zip(&dxi) {
            assert!((a - 0.3).abs() < 1e-14 && (b - 0.3).abs() < 1e-14);
        }
    }

    #[test]
    fn rhs_single_site_perturbation() {
        let eps = 1e-3;
        let model = fk(0.0);
        let a0 = model.alpha0();
        let mut u = vec![0.0; 12];
        u[5] = eps;
        let s = LatticeState::new(u, vec![0.0; 12], BoundaryMode::Helical).unwrap();
        let (du, dxi) = rhs(&s, &model).unwrap();
        // hand evaluation of the Ξ equation
        let expected_k = 2.0 * (-2.0 * eps - (2.0 * PI * eps).sin()) + a0 * eps;
        assert!((dxi[5] - expected_k).abs() < 1e-12);
        assert!((dxi[4] - 2.0 * eps).abs() < 1e-14);
        assert!((dxi[6] - 2.0 * eps).abs() < 1e-14);
        assert!((du[5] + a0 * eps).abs() < 1e-14);
    }

    #[test]
    fn rhs_rejects_fractional_stencil() {
        let rule = CustomRule::new("half", 2, Extension::DiagonalPeriodic, |x| x[1] - x[0]);
        let model = ModelDescriptor::custom(rule, vec![0.0, 0.5], 0.01).unwrap();
        let s = init_front(8, InitStyle::Step);
        assert!(matches!(
            rhs(&s, &model),
            Err(LatticeError::NonIntegerStencil(_))
        ));
    }

    #[test]
    fn equilibrium_is_fixed_by_rk4() {
        let s = LatticeState::new(vec![0.0; 10], vec![0.0; 10], BoundaryMode::FixedFront).unwrap();
        let out = step_rk4(&s, &fk(0.0), 0.005).unwrap();
        // four stages reach at most four sites in from the right ghost
        assert!(out.u[..5]
            .iter()
            .chain(&out.xi[..5])
            .all(|v| v.abs() < 1e-15));
        assert!((out.t - 0.005).abs() < 1e-15);
    }

    #[test]
    fn rk4_follows_constant_drift() {
        let model = constant_force(0.3, 0.005);
        let a0 = model.alpha0();
        let mut s =
            LatticeState::new(vec![0.0; 6], vec![0.3 / a0; 6], BoundaryMode::FixedFront).unwrap();
        let mut st = Rk4::new(&model, 6).unwrap();
        for _ in 0..1000 {
            st.step(&mut s, 0.005).unwrap();
        }
        for (u, xi) in s.u.iter().zip(&s.xi) {
            assert!((u - 0.3 * 5.0).abs() < 1e-12);
            assert!((xi - 0.3 * 5.0 - 0.3 / a0).abs() < 1e-12);
        }
    }

    #[test]
    fn rk4_decay_conserves_sum() {
        let rule = CustomRule::new("zero", 3, Extension::DiagonalPeriodic, |_| 0.0);
        let model = ModelDescriptor::custom(rule, vec![0.0, 1.0, -1.0], 0.005).unwrap();
        let mut u = vec![0.0; 6];
        u[0] = 1.0;
        let mut s = LatticeState::new(u, vec![0.0; 6], BoundaryMode::FixedFront).unwrap();
        let mut st = Rk4::new(&model, 6).unwrap();
        for _ in 0..400 {
            st.step(&mut s, 0.005).unwrap();
            assert!((s.u[0] + s.xi[0] - 1.0).abs() < 1e-13);
        }
        assert!((s.u[0] - 0.5).abs() < 1e-10, "relaxed to u = Ξ");
    }

    #[test]
    fn rk4_refuses_large_step() {
        let s = init_front(16, InitStyle::Step);
        let err = step_rk4(&s, &fk(0.0), 0.0051).unwrap_err();
        assert!(matches!(err, LatticeError::StepTooLarge { .. }));
    }

    #[test]
    fn blow_up_reports_index() {
        let rule = CustomRule::new("explode", 3, Extension::DiagonalPeriodic, |x| {
            if x[0] > 0.5 {
                f64::MAX
            } else {
                0.0
            }
        });
        let model = ModelDescriptor::custom(rule, vec![0.0, 1.0, -1.0], 0.005).unwrap();
        let mut s =
            LatticeState::new(vec![0.0; 8], vec![0.0; 8], BoundaryMode::FixedFront).unwrap();
        s.u[3] = 0.9;
        let err = step_rk4(&s, &model, 0.005).unwrap_err();
        assert!(
            matches!(err, LatticeError::BlowUp { index: 3, .. }),
            "{err:?}"
        );
    }

    /// Order check on the constant-force model started off its drift
    /// solution: u(t) = (s(t) − d(t))/2 with s = 2 g0 t and
    /// d = g0/α0 (1 − e^{−2 α0 t}).
    #[test]
    fn rk4_observed_order() {
        let g0 = 0.3;
        let model = constant_force(g0, 0.5);
        let a0 = model.alpha0();
        let t_end = 2.0;
        let exact = g0 * t_end - 0.5 * g0 / a0 * (1.0 - (-2.0 * a0 * t_end).exp());
        let err = |dt: f64| {
            let mut s =
                LatticeState::new(vec![0.0; 6], vec![0.0; 6], BoundaryMode::FixedFront).unwrap();
            let mut st = Rk4::new(&model, 6).unwrap();
            let n = (t_end / dt).round() as usize;
            for _ in 0..n {
                st.step(&mut s, dt).unwrap();
            }
            (s.u[0] - exact).abs()
        };
        let (e1, e2, e3) = (err(0.4), err(0.2), err(0.1));
        let order1 = (e1 / e2).log2();
        let order2 = (e2 / e3).log2();
        assert!(order1 >= 3.5 && order2 >= 3.5, "orders {order1} {order2}");
    }

    #[test]
    fn front_position_examples() {
        let mut u = vec![0.0; 20];
        u[10] = 0.3;
        u[11] = 0.7;
        for v in u.iter_mut().skip(12) {
            *v = 1.0;
        }
        let s = LatticeState::new(u.clone(), u.clone(), BoundaryMode::FixedFront).unwrap();
        assert!((front_position(&s, 0.5).unwrap() - 10.5).abs() < 1e-14);

        let flat =
            LatticeState::new(vec![0.0; 20], vec![0.0; 20], BoundaryMode::FixedFront).unwrap();
        assert!(matches!(
            front_position(&flat, 0.5),
            Err(LatticeError::NoFront { .. })
        ));

        let mut shifted = vec![0.0; 20];
        shifted[3..].copy_from_slice(&u[..17]);
        let s3 = LatticeState::new(shifted.clone(), shifted, BoundaryMode::FixedFront).unwrap();
        assert!((front_position(&s3, 0.5).unwrap() - 13.5).abs() < 1e-14);

        let mut bumpy = u.clone();
        bumpy[15] = 0.5;
        let sb = LatticeState::new(bumpy.clone(), bumpy, BoundaryMode::FixedFront).unwrap();
        assert!(matches!(
            front_position(&sb, 0.5),
            Err(LatticeError::NonMonotoneFront { index: 15 })
        ));
    }

    #[test]
    fn helical_position_unwraps() {
        let m = 8;
        let mut s = init_front(m, InitStyle::LinearSlope);
        let x0 = front_position(&s, 0.5).unwrap();
        assert!((x0 - 4.0).abs() < 1e-12);
        // lifting every u by 1/M moves the crossing one site to the left
        for k in 1..=20 {
            for v in s.u.iter_mut() {
                *v += 1.0 / m as f64;
            }
            let x = front_position(&s, 0.5).unwrap();
            assert!((x - (4.0 - k as f64)).abs() < 1e-9, "k = {k}: {x}");
        }
    }

    #[test]
    fn velocity_fit_examples() {
        let mut tr = FrontTrace::new(0.5);
        for k in 0..100 {
            let t = k as f64 * 0.1;
            tr.push(t, 0.3 * t);
        }
        let fit = measure_velocity(&tr, 0.5).unwrap();
        assert!((fit.drift - 0.3).abs() < 1e-12);
        assert!((fit.c + 0.3).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12 && fit.reliable);

        let mut st = FrontTrace::new(0.5);
        for k in 0..100 {
            st.push(k as f64, 17.25);
        }
        let fit = measure_velocity(&st, 0.5).unwrap();
        assert_eq!(fit.c, 0.0);
        assert!(fit.pinned() && fit.reliable);

        let mut short = FrontTrace::new(0.5);
        short.push(0.0, 0.0);
        assert!(matches!(
            measure_velocity(&short, 1.0),
            Err(LatticeError::InsufficientData { .. })
        ));
    }

    #[test]
    fn init_examples() {
        let s = init_front(8, InitStyle::Step);
        assert_eq!(s.u, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(s.xi, s.u);
        assert_eq!(
            init_front(4, InitStyle::LinearSlope).u,
            vec![0.0, 0.25, 0.5, 0.75]
        );
        assert_eq!(init_front(8, InitStyle::Tanh).u[4], 0.5);
    }

    #[test]
    fn rotation_constant_force() {
        for m in [8, 16] {
            let est = rotation_number(&constant_force(0.3, 0.005), m, 20.0, 0.005).unwrap();
            assert!((est.lambda_cesaro - 0.3).abs() < 1e-9, "{est:?}");
            assert!(
                (est.c_p - 0.3 * m as f64).abs() < 1e-6 * m as f64,
                "{est:?}"
            );
        }
    }

    #[test]
    fn rotation_pinned_symmetric_fk() {
        let est = rotation_number(&fk(0.0), 32, 50.0, 0.005).unwrap();
        assert!(est.lambda_p.abs() < 1e-9, "{est:?}");
        assert_eq!(est.windings, 0);
    }

    #[test]
    fn rotation_requires_periodic_f() {
        let cubic = ModelDescriptor::cubic_bistable(1.0, 0.25, 1.0, 0.05).unwrap();
        assert!(matches!(
            rotation_number(&cubic, 16, 1.0, 0.01),
            Err(LatticeError::NotPeriodic)
        ));
    }

    #[test]
    fn guard_aborts_without_recentering() {
        let model = fk(0.2);
        let mut opts = SimOptions::new(60.0, 0.005, 0.9);
        opts.recenter = false;
        let err = simulate(&model, init_front(120, InitStyle::Step), &opts).unwrap_err();
        assert!(
            matches!(err, LatticeError::BoundaryContamination { .. }),
            "{err:?}"
        );
    }

    /// Reflected model with reflected data reproduces 1 − u_{M−1−i}.
    #[test]
    fn reflection_symmetry_of_trajectories() {
        let model = ModelDescriptor::cubic_bistable(1.0, 0.3, 1.0, 0.05).unwrap();
        let refl = model.reflected();
        let m = 60;
        let a = init_front(m, InitStyle::Tanh);
        let mut b = a.clone();
        for i in 0..m {
            b.u[i] = 1.0 - a.u[m - 1 - i];
            b.xi[i] = 1.0 - a.xi[m - 1 - i];
        }
        let (mut a, mut b) = (a, b);
        let mut sa = Rk4::new(&model, m).unwrap();
        let mut sb = Rk4::new(&refl, m).unwrap();
        for _ in 0..2000 {
            sa.step(&mut a, 0.01).unwrap();
            sb.step(&mut b, 0.01).unwrap();
        }
        for i in 0..m {
            assert!((b.u[i] - (1.0 - a.u[m - 1 - i])).abs() < 1e-8);
            assert!((b.xi[i] - (1.0 - a.xi[m - 1 - i])).abs() < 1e-8);
        }
    }

    /// Adding 1 to every u and Ξ maps trajectories of a diagonal-periodic F
    /// to trajectories.
    #[test]
    fn diagonal_shift_equivariance() {
        let model = fk(0.1);
        let a = init_front(40, InitStyle::LinearSlope);
        let mut b = a.clone();
        for (u, xi) in b.u.iter_mut().zip(b.xi.iter_mut()) {
            *u += 1.0;
            *xi += 1.0;
        }
        let (mut a, mut b) = (a, b);
        let mut sa = Rk4::new(&model, 40).unwrap();
        let mut sb = Rk4::new(&model, 40).unwrap();
        for _ in 0..2000 {
            sa.step(&mut a, 0.005).unwrap();
            sb.step(&mut b, 0.005).unwrap();
        }
        for i in 0..40 {
            assert!((b.u[i] - a.u[i] - 1.0).abs() < 1e-10);
            assert!((b.xi[i] - a.xi[i] - 1.0).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn drift_identity(
            seed_u in prop::collection::vec(0.0f64..1.0, 16),
            seed_x in prop::collection::vec(0.0f64..1.0, 16),
            l in -0.2f64..0.2,
        ) {
            let model = fk(l);
            let s = LatticeState::new(seed_u, seed_x, BoundaryMode::FixedFront).unwrap();
            let (du, dxi) = rhs(&s, &model).unwrap();
            let lhs: f64 = du.iter().zip(&dxi).map(|(a, b)| a + b).sum();
            let mut ev = LatticeRhs::new(&model).unwrap();
            let rhs_sum = 2.0 * ev.sum_f(&s.u, s.boundary).unwrap();
            prop_assert!((lhs - rhs_sum).abs() <= 1e-12 * (1.0 + rhs_sum.abs()) * 16.0);
        }
    }
}
