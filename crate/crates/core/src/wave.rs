//! Traveling-wave profiles on a truncated `z` domain.
//!
//! The profile system is
//!
//! ```text
//! c φ1'(z) = α0 (φ2 − φ1)
//! c φ2'(z) = 2 F(φ1(z + r_0), …, φ1(z + r_N)) + α0 (φ1 − φ2)
//! ```
//!
//! with `φ → 0` at `−∞` and `φ → 1` at `+∞`, so that `u_i(t) = φ1(i + c t)`
//! and `Ξ_i(t) = φ2(i + c t)` solve the lattice system. Derivatives are
//! first-order upwind and shifted arguments are linearly interpolated; both
//! keep the discrete operator monotone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{
    front_position, init_front, measure_velocity, rotation_number, simulate, InitStyle,
    LatticeError, LatticeState, SimOptions, SimOutput, BOUNDARY_GUARD,
};
use crate::linalg::BandMatrix;
use crate::model::{check_assumptions, find_interior_zero, ModelDescriptor, ModelError, ROOT_TOL};
use crate::PINNING_THRESHOLD;

pub const NEWTON_TOL: f64 = 1e-10;
pub const PSEUDOTIME_TOL: f64 = 1e-8;
pub const STATIONARY_TOL: f64 = 1e-8;
pub const MONOTONE_TOL: f64 = 1e-8;
pub const LIMIT_TOL: f64 = 1e-4;

const UPWIND_SWITCH: f64 = 1e-8;
const ARMIJO_MIN_STEP: f64 = 1.0 / (1u64 << 20) as f64;
const PHASE_RATE: f64 = 2.0;
/// Tail depth `exp(−TAIL_DECADES)` aimed for at each domain end.
const TAIL_DECADES: f64 = 23.0;
const MIN_HALF_WIDTH: f64 = 20.0;
const MAX_HALF_WIDTH: f64 = 60.0;
const ASSUMPTION_GRID: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Lattice(#[from] LatticeError),

    #[error("assumption gate failed: {0}")]
    Gate(String),

    #[error("invalid profile grid: {0}")]
    InvalidGrid(String),

    #[error("pinned regime suspected (c = {c}): {reason}; use the stationary solver")]
    PinnedSuspected { c: f64, reason: String },

    #[error("no convergence after {iterations} iterations, residual {residual}")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("domain [{z_min}, {z_max}] too small: {reason}")]
    DomainTooSmall {
        z_min: f64,
        z_max: f64,
        reason: String,
    },

    #[error("no stationary profile: {0}")]
    NoStationaryProfile(String),

    #[error("lattice samples do not cover the grid: {empty} empty bins, first at z = {z}")]
    Coverage { empty: usize, z: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solution invariant violated: {0}")]
    Invariant(String),

    #[error("continuation failed at {param} = {value}: {source}")]
    Continuation {
        param: String,
        value: f64,
        source: Box<WaveError>,
    },
}

type WaveResult<T> = std::result::Result<T, WaveError>;

/// Node values of `(φ1, φ2)` at `z_k = z_min + k h` together with `c`.
///
/// Values outside the grid are 0 to the left and 1 to the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileGrid {
    pub z_min: f64,
    pub z_max: f64,
    pub h: f64,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub c: f64,
}

/// Node counts left and right of `z = 0`, which is always a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridLayout {
    pub n_left: usize,
    pub n_right: usize,
    pub h: f64,
}

impl GridLayout {
    pub fn from_extent(z_min: f64, z_max: f64, h: f64) -> WaveResult<Self> {
        if !(h > 0.0) || !(z_min < 0.0) || !(z_max > 0.0) {
            return Err(WaveError::InvalidGrid(format!(
                "need z_min < 0 < z_max and h > 0, got [{z_min}, {z_max}], h = {h}"
            )));
        }
        Ok(Self {
            n_left: (-z_min / h).round() as usize,
            n_right: (z_max / h).round() as usize,
            h,
        })
    }

    pub fn len(&self) -> usize {
        self.n_left + self.n_right + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn z_min(&self) -> f64 {
        -(self.n_left as f64) * self.h
    }

    pub fn z_max(&self) -> f64 {
        self.n_right as f64 * self.h
    }

    fn enlarged(&self, factor: f64) -> Self {
        Self {
            n_left: (self.n_left as f64 * factor).ceil() as usize,
            n_right: (self.n_right as f64 * factor).ceil() as usize,
            h: self.h,
        }
    }
}

impl ProfileGrid {
    pub fn new(z_min: f64, h: f64, phi1: Vec<f64>, phi2: Vec<f64>, c: f64) -> WaveResult<Self> {
        if phi1.len() != phi2.len() || phi1.len() < 3 {
            return Err(WaveError::InvalidGrid(format!(
                "phi1 and phi2 need equal length ≥ 3, got {} and {}",
                phi1.len(),
                phi2.len()
            )));
        }
        if !(h > 0.0) || !z_min.is_finite() || !c.is_finite() {
            return Err(WaveError::InvalidGrid("non-finite grid parameters".into()));
        }
        if phi1.iter().chain(&phi2).any(|v| !v.is_finite()) {
            return Err(WaveError::InvalidGrid("non-finite profile values".into()));
        }
        let z_max = z_min + (phi1.len() - 1) as f64 * h;
        Ok(Self {
            z_min,
            z_max,
            h,
            phi1,
            phi2,
            c,
        })
    }

    /// `φ1 = φ2 = (1 + tanh((z − z0)/w))/2` with `z0` placed so that
    /// `φ1(0) = level`.
    pub fn tanh_guess(layout: GridLayout, level: f64, width: f64, c: f64) -> Self {
        let z0 = -width * (2.0 * level - 1.0).atanh();
        let phi: Vec<f64> = (0..layout.len())
            .map(|k| {
                let z = layout.z_min() + k as f64 * layout.h;
                0.5 * (1.0 + ((z - z0) / width).tanh())
            })
            .collect();
        Self {
            z_min: layout.z_min(),
            z_max: layout.z_max(),
            h: layout.h,
            phi2: phi.clone(),
            phi1: phi,
            c,
        }
    }

    pub fn len(&self) -> usize {
        self.phi1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi1.is_empty()
    }

    pub fn z(&self, k: usize) -> f64 {
        self.z_min + k as f64 * self.h
    }

    pub fn layout(&self) -> GridLayout {
        GridLayout {
            n_left: (-self.z_min / self.h).round().max(0.0) as usize,
            n_right: (self.z_max / self.h).round().max(0.0) as usize,
            h: self.h,
        }
    }

    /// Index of the node at `z = 0`.
    pub fn zero_index(&self) -> WaveResult<usize> {
        let k = (-self.z_min / self.h).round();
        if k < 0.0
            || k as usize >= self.len()
            || (self.z_min + k * self.h).abs() > 1e-9 * self.h.max(1.0)
        {
            return Err(WaveError::InvalidGrid("z = 0 is not a grid node".into()));
        }
        Ok(k as usize)
    }

    /// Linear interpolation with the 0/1 boundary rule.
    pub fn interp(values: &[f64], z_min: f64, h: f64, z: f64) -> f64 {
        let s = (z - z_min) / h;
        let j = s.floor();
        let w = s - j;
        let j = j as isize;
        let node = |i: isize| node_value(values, i);
        if w == 0.0 {
            node(j)
        } else {
            (1.0 - w) * node(j) + w * node(j + 1)
        }
    }

    pub fn phi1_at(&self, z: f64) -> f64 {
        Self::interp(&self.phi1, self.z_min, self.h, z)
    }

    pub fn phi2_at(&self, z: f64) -> f64 {
        Self::interp(&self.phi2, self.z_min, self.h, z)
    }

    /// Resamples onto another layout by interpolation.
    pub fn resample(&self, layout: GridLayout) -> Self {
        let z_min = layout.z_min();
        let (phi1, phi2) = (0..layout.len())
            .map(|k| {
                let z = z_min + k as f64 * layout.h;
                (self.phi1_at(z), self.phi2_at(z))
            })
            .unzip();
        Self {
            z_min,
            z_max: layout.z_max(),
            h: layout.h,
            phi1,
            phi2,
            c: self.c,
        }
    }

    /// Most negative increment of `φ1` and `φ2` (positive when strictly
    /// increasing).
    pub fn monotone_defect(&self) -> f64 {
        self.phi1
            .windows(2)
            .chain(self.phi2.windows(2))
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Worst deviation from the limits 0 and 1 over the outer 10% on each
    /// side.
    pub fn limit_defect(&self) -> f64 {
        let n = self.len();
        let tail = (n / 10).max(1);
        let left = self.phi1[..tail]
            .iter()
            .chain(&self.phi2[..tail])
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let right = self.phi1[n - tail..]
            .iter()
            .chain(&self.phi2[n - tail..])
            .fold(0.0_f64, |m, v| m.max((1.0 - v).abs()));
        left.max(right)
    }

    fn clamp_values(&mut self) {
        for v in self.phi1.iter_mut().chain(self.phi2.iter_mut()) {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

#[inline]
fn node_value(values: &[f64], i: isize) -> f64 {
    if i < 0 {
        0.0
    } else if i as usize >= values.len() {
        1.0
    } else {
        values[i as usize]
    }
}

/// Fixes the translation freedom by `φ1(0) = level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseCondition {
    pub level: f64,
}

impl PhaseCondition {
    pub fn new(level: f64) -> WaveResult<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(WaveError::Precondition(format!(
                "phase level must lie in (0,1), got {level}"
            )));
        }
        Ok(Self { level })
    }

    /// Phase level at the interior zero `b`.
    pub fn at_interior_zero(model: &ModelDescriptor) -> WaveResult<Self> {
        Self::new(find_interior_zero(model.nonlinearity(), ROOT_TOL)?.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Newton,
    Pseudotime,
    Stationary,
    LatticeExtract,
    HullExtrapolate,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Newton => "newton",
            Method::Pseudotime => "pseudotime",
            Method::Stationary => "stationary",
            Method::LatticeExtract => "lattice_extract",
            Method::HullExtrapolate => "hull_extrapolate",
        }
    }
}

pub const STATIONARY_NOTE: &str = "profile not unique: representative solution";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSolution {
    pub grid: ProfileGrid,
    pub residual_sup: f64,
    pub monotone_defect: f64,
    pub phase_level: f64,
    pub method: Method,
    pub iterations: usize,
    pub pinned: bool,
    pub note: Option<String>,
}

impl ProfileSolution {
    pub fn c(&self) -> f64 {
        self.grid.c
    }

    fn finish(
        model: &ModelDescriptor,
        grid: ProfileGrid,
        method: Method,
        iterations: usize,
    ) -> WaveResult<Self> {
        let (r1, r2) = profile_residual(&grid, model)?;
        let residual_sup = sup(&r1).max(sup(&r2));
        let monotone_defect = grid.monotone_defect();
        if monotone_defect < -MONOTONE_TOL {
            return Err(WaveError::Invariant(format!(
                "profile decreases by {} somewhere",
                -monotone_defect
            )));
        }
        let k0 = grid.zero_index()?;
        let pinned = grid.c.abs() < PINNING_THRESHOLD;
        Ok(Self {
            phase_level: grid.phi1[k0],
            residual_sup,
            monotone_defect,
            method,
            iterations,
            pinned,
            note: (method == Method::Stationary).then(|| STATIONARY_NOTE.to_string()),
            grid,
        })
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Interpolation taps of one shift: `φ(z_k + r) = (1−w) φ_{k+q} + w φ_{k+q+1}`.
#[derive(Debug, Clone, Copy)]
struct Tap {
    q: isize,
    w: f64,
}

/// Precomputed shift taps and scratch for one model and grid spacing.
struct Discretization<'a> {
    model: &'a ModelDescriptor,
    taps: Vec<Tap>,
    reach: usize,
    args: Vec<f64>,
}

impl<'a> Discretization<'a> {
    fn new(model: &'a ModelDescriptor, h: f64) -> Self {
        let taps: Vec<Tap> = model
            .stencil()
            .shifts()
            .iter()
            .map(|&r| {
                let s = r / h;
                let near = s.round();
                if (s - near).abs() < 1e-9 {
                    Tap {
                        q: near as isize,
                        w: 0.0,
                    }
                } else {
                    let q = s.floor();
                    Tap {
                        q: q as isize,
                        w: s - q,
                    }
                }
            })
            .collect();
        let reach = taps
            .iter()
            .map(|t| t.q.unsigned_abs() + usize::from(t.w > 0.0))
            .max()
            .unwrap_or(0)
            .max(1);
        let args = vec![0.0; taps.len()];
        Self {
            model,
            taps,
            reach,
            args,
        }
    }

    fn fill_args(&mut self, phi1: &[f64], k: usize) {
        for (a, t) in self.args.iter_mut().zip(&self.taps) {
            let j = k as isize + t.q;
            *a = if t.w == 0.0 {
                node_value(phi1, j)
            } else {
                (1.0 - t.w) * node_value(phi1, j) + t.w * node_value(phi1, j + 1)
            };
        }
    }

    fn f_at(&mut self, phi1: &[f64], k: usize) -> WaveResult<f64> {
        self.fill_args(phi1, k);
        Ok(self.model.nonlinearity().eval_in_box(&self.args)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Upwind {
    Backward,
    Forward,
    Centered,
}

impl Upwind {
    fn of(c: f64) -> Self {
        if c > UPWIND_SWITCH {
            Upwind::Backward
        } else if c < -UPWIND_SWITCH {
            Upwind::Forward
        } else {
            Upwind::Centered
        }
    }
}

#[inline]
fn derivative(phi: &[f64], k: usize, h: f64, dir: Upwind) -> f64 {
    let k = k as isize;
    match dir {
        Upwind::Backward => (node_value(phi, k) - node_value(phi, k - 1)) / h,
        Upwind::Forward => (node_value(phi, k + 1) - node_value(phi, k)) / h,
        Upwind::Centered => (node_value(phi, k + 1) - node_value(phi, k - 1)) / (2.0 * h),
    }
}

/// Discrete upwind derivative `D φ` used by the residual.
pub fn upwind_derivative(phi: &[f64], h: f64, c: f64) -> Vec<f64> {
    let dir = Upwind::of(c);
    (0..phi.len()).map(|k| derivative(phi, k, h, dir)).collect()
}

/// Residuals of both profile equations at every node.
pub fn profile_residual(
    grid: &ProfileGrid,
    model: &ModelDescriptor,
) -> WaveResult<(Vec<f64>, Vec<f64>)> {
    let mut disc = Discretization::new(model, grid.h);
    let alpha0 = model.alpha0();
    let dir = Upwind::of(grid.c);
    let n = grid.len();
    let mut r1 = vec![0.0; n];
    let mut r2 = vec![0.0; n];
    for k in 0..n {
        let f = disc.f_at(&grid.phi1, k)?;
        let d1 = derivative(&grid.phi1, k, grid.h, dir);
        let d2 = derivative(&grid.phi2, k, grid.h, dir);
        r1[k] = grid.c * d1 - alpha0 * (grid.phi2[k] - grid.phi1[k]);
        r2[k] = grid.c * d2 - 2.0 * f - alpha0 * (grid.phi1[k] - grid.phi2[k]);
    }
    Ok((r1, r2))
}

/// `sup |φ2 − (φ1 + (c/α0) D φ1)|`: the first profile equation solved for φ2.
pub fn first_equation_defect(grid: &ProfileGrid, model: &ModelDescriptor) -> f64 {
    let d = upwind_derivative(&grid.phi1, grid.h, grid.c);
    let s = grid.c / model.alpha0();
    grid.phi1
        .iter()
        .zip(&grid.phi2)
        .zip(&d)
        .map(|((p1, p2), d)| (p2 - (p1 + s * d)).abs())
        .fold(0.0, f64::max)
}

/// Default spacing `min(0.1, r*/8)`.
pub fn default_h(model: &ModelDescriptor) -> f64 {
    0.1_f64.min(model.stencil().r_star() / 8.0)
}

/// Smallest decay rate of the linearization at the state `v ∈ {0, 1}`:
/// the first root `λ` (positive on the left, negative on the right) of
/// `2 c λ + c² λ² / α0 = 2 Σ_i ∂_i F(v) e^{λ r_i}`.
fn tail_rate(model: &ModelDescriptor, c: f64, v: f64, left: bool) -> WaveResult<Option<f64>> {
    let nl = model.nonlinearity();
    let point = vec![v; nl.arity()];
    let partials: Vec<f64> = (0..nl.arity())
        .map(|i| nl.partial(&point, i))
        .collect::<Result<_, _>>()?;
    let shifts = model.stencil().shifts();
    let alpha0 = model.alpha0();
    let phi = |lam: f64| {
        let g: f64 = partials
            .iter()
            .zip(shifts)
            .map(|(a, r)| a * (lam * r).exp())
            .sum();
        2.0 * c * lam + c * c * lam * lam / alpha0 - 2.0 * g
    };
    let sign = if left { 1.0 } else { -1.0 };
    let step = 0.01;
    let f0 = phi(0.0);
    if !(f0 > 0.0) {
        return Ok(None);
    }
    let mut prev = 0.0;
    for k in 1..=4000 {
        let lam = sign * step * k as f64;
        if phi(lam) <= 0.0 {
            let (mut a, mut b) = (prev, lam);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if phi(m) > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            return Ok(Some(0.5 * (a + b)));
        }
        prev = lam;
    }
    Ok(None)
}

/// Domain sized from the tail decay rates at velocity `c`, between
/// `20 r*` and `60 r*` on each side.
pub fn layout_for(model: &ModelDescriptor, c: f64, h: f64) -> WaveResult<GridLayout> {
    let r = model.stencil().r_star();
    let width = |rate: Option<f64>| match rate {
        Some(l) => (TAIL_DECADES / l.abs()).clamp(MIN_HALF_WIDTH * r, MAX_HALF_WIDTH * r),
        None => MAX_HALF_WIDTH * r,
    };
    let wl = width(tail_rate(model, c, 0.0, true)?);
    let wr = width(tail_rate(model, c, 1.0, false)?);
    Ok(GridLayout {
        n_left: (wl / h).ceil() as usize,
        n_right: (wr / h).ceil() as usize,
        h,
    })
}

fn check_extent(grid: &ProfileGrid, model: &ModelDescriptor) -> WaveResult<()> {
    let r = model.stencil().r_star();
    let need = MIN_HALF_WIDTH * r - 1e-9;
    if grid.z_min > -need || grid.z_max < need {
        return Err(WaveError::DomainTooSmall {
            z_min: grid.z_min,
            z_max: grid.z_max,
            reason: format!("each side must extend at least 20 r* = {}", 20.0 * r),
        });
    }
    Ok(())
}

/// Checks the solver gates and returns the phase level at `b`.
pub fn gate(model: &ModelDescriptor) -> WaveResult<f64> {
    let report = check_assumptions(model, ASSUMPTION_GRID)?;
    if let Some(reason) = report.solver_gate_failure() {
        return Err(WaveError::Gate(reason));
    }
    report
        .b
        .ok_or_else(|| WaveError::Gate("(B) no interior zero".into()))
}

// Newton unknowns per node k: x[3k] = φ1_k, x[3k+1] = φ2_k, x[3k+2] = c_k.
// Rows per node: 3k and 3k+1 are the profile equations, 3k+2 ties c_k to its
// neighbour towards z = 0, or is the phase condition at z = 0.

fn newton_residual(
    x: &[f64],
    k0: usize,
    theta: f64,
    h: f64,
    disc: &mut Discretization,
    out: &mut [f64],
    phi1: &mut Vec<f64>,
    phi2: &mut Vec<f64>,
) -> WaveResult<()> {
    let n = x.len() / 3;
    phi1.clear();
    phi2.clear();
    phi1.extend((0..n).map(|k| x[3 * k]));
    phi2.extend((0..n).map(|k| x[3 * k + 1]));
    let alpha0 = disc.model.alpha0();
    for k in 0..n {
        let c = x[3 * k + 2];
        let dir = Upwind::of(c);
        let f = disc.f_at(phi1, k)?;
        out[3 * k] = c * derivative(phi1, k, h, dir) - alpha0 * (phi2[k] - phi1[k]);
        out[3 * k + 1] = c * derivative(phi2, k, h, dir) - 2.0 * f - alpha0 * (phi1[k] - phi2[k]);
        out[3 * k + 2] = match k.cmp(&k0) {
            std::cmp::Ordering::Less => c - x[3 * (k + 1) + 2],
            std::cmp::Ordering::Equal => phi1[k] - theta,
            std::cmp::Ordering::Greater => c - x[3 * (k - 1) + 2],
        };
    }
    Ok(())
}

fn newton_jacobian(
    x: &[f64],
    k0: usize,
    h: f64,
    disc: &mut Discretization,
    phi1: &[f64],
    phi2: &[f64],
) -> WaveResult<BandMatrix> {
    let n = x.len() / 3;
    let s = disc.reach;
    let band = 3 * s + 2;
    let mut jac = BandMatrix::zeros(3 * n, band, band);
    let alpha0 = disc.model.alpha0();
    let nl = disc.model.nonlinearity();
    let add = |jac: &mut BandMatrix, i: usize, j: isize, v: f64| {
        if j >= 0 && (j as usize) < 3 * n {
            let j = j as usize;
            let cur = jac.get(i, j);
            jac.set(i, j, cur + v);
        }
    };
    let mut grads = vec![0.0; disc.taps.len()];
    for k in 0..n {
        let c = x[3 * k + 2];
        let dir = Upwind::of(c);
        let (r1, r2) = (3 * k, 3 * k + 1);
        let ki = k as isize;
        // c D φ; neighbours beyond the grid are fixed ghosts
        let stencil: &[(isize, f64)] = match dir {
            Upwind::Backward => &[(0, 1.0), (-1, -1.0)],
            Upwind::Forward => &[(1, 1.0), (0, -1.0)],
            Upwind::Centered => &[(1, 0.5), (-1, -0.5)],
        };
        for &(o, w) in stencil {
            let j = ki + o;
            if j >= 0 && (j as usize) < n {
                add(&mut jac, r1, 3 * j, c * w / h);
                add(&mut jac, r2, 3 * j + 1, c * w / h);
            }
        }
        add(&mut jac, r1, 3 * ki, alpha0);
        add(&mut jac, r1, 3 * ki + 1, -alpha0);
        add(&mut jac, r1, 3 * ki + 2, derivative(phi1, k, h, dir));
        add(&mut jac, r2, 3 * ki, -alpha0);
        add(&mut jac, r2, 3 * ki + 1, alpha0);
        add(&mut jac, r2, 3 * ki + 2, derivative(phi2, k, h, dir));

        disc.fill_args(phi1, k);
        for (i, g) in grads.iter_mut().enumerate() {
            *g = if nl.evaluable_everywhere() {
                nl.partial(&disc.args, i)?
            } else {
                let mut a = disc.args.clone();
                for v in a.iter_mut() {
                    *v = v.clamp(0.0, 1.0);
                }
                nl.partial(&a, i)?
            };
        }
        for (t, g) in disc.taps.iter().zip(&grads) {
            let j = ki + t.q;
            if j >= 0 && (j as usize) < n {
                add(&mut jac, r1 + 1, 3 * j, -2.0 * g * (1.0 - t.w));
            }
            if t.w > 0.0 && j + 1 >= 0 && ((j + 1) as usize) < n {
                add(&mut jac, r1 + 1, 3 * (j + 1), -2.0 * g * t.w);
            }
        }

        let r3 = 3 * k + 2;
        match k.cmp(&k0) {
            std::cmp::Ordering::Less => {
                add(&mut jac, r3, 3 * ki + 2, 1.0);
                add(&mut jac, r3, 3 * (ki + 1) + 2, -1.0);
            }
            std::cmp::Ordering::Equal => add(&mut jac, r3, 3 * ki, 1.0),
            std::cmp::Ordering::Greater => {
                add(&mut jac, r3, 3 * ki + 2, 1.0);
                add(&mut jac, r3, 3 * (ki - 1) + 2, -1.0);
            }
        }
    }
    Ok(jac)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton on the full discrete system with unknown `c`.
pub fn solve_newton(
    model: &ModelDescriptor,
    init: &ProfileGrid,
    phase: PhaseCondition,
    tol: f64,
    max_iter: usize,
) -> WaveResult<ProfileSolution> {
    check_extent(init, model)?;
    let k0 = init.zero_index()?;
    let n = init.len();
    let h = init.h;
    let theta = phase.level;
    let mut disc = Discretization::new(model, h);
    let mut x = vec![0.0; 3 * n];
    for k in 0..n {
        x[3 * k] = init.phi1[k].clamp(0.0, 1.0);
        x[3 * k + 1] = init.phi2[k].clamp(0.0, 1.0);
        x[3 * k + 2] = init.c;
    }
    let mut res = vec![0.0; 3 * n];
    let mut trial = vec![0.0; 3 * n];
    let mut trial_res = vec![0.0; 3 * n];
    let (mut p1, mut p2) = (Vec::with_capacity(n), Vec::with_capacity(n));
    newton_residual(&x, k0, theta, h, &mut disc, &mut res, &mut p1, &mut p2)?;
    let mut iterations = 0;
    loop {
        let r = sup(&res);
        if r <= tol {
            break;
        }
        if iterations >= max_iter {
            return Err(WaveError::NonConvergence {
                iterations,
                residual: r,
            });
        }
        iterations += 1;
        let jac = newton_jacobian(&x, k0, h, &mut disc, &p1, &p2)?;
        let lu = jac.factor().map_err(|e| WaveError::PinnedSuspected {
            c: x[3 * k0 + 2],
            reason: format!("singular Jacobian at column {}", e.column),
        })?;
        let mut delta: Vec<f64> = res.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut delta);
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(WaveError::PinnedSuspected {
                c: x[3 * k0 + 2],
                reason: "non-finite Newton step".into(),
            });
        }
        let merit = norm2(&res);
        let mut lambda = 1.0;
        loop {
            for k in 0..n {
                trial[3 * k] = (x[3 * k] + lambda * delta[3 * k]).clamp(0.0, 1.0);
                trial[3 * k + 1] = (x[3 * k + 1] + lambda * delta[3 * k + 1]).clamp(0.0, 1.0);
                trial[3 * k + 2] = x[3 * k + 2] + lambda * delta[3 * k + 2];
            }
            newton_residual(
                &trial,
                k0,
                theta,
                h,
                &mut disc,
                &mut trial_res,
                &mut p1,
                &mut p2,
            )?;
            if norm2(&trial_res) <= (1.0 - 1e-4 * lambda) * merit {
                break;
            }
            lambda *= 0.5;
            if lambda < ARMIJO_MIN_STEP {
                return Err(WaveError::NonConvergence {
                    iterations,
                    residual: r,
                });
            }
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut res, &mut trial_res);
    }
    let c = x[3 * k0 + 2];
    if c.abs() < PINNING_THRESHOLD {
        return Err(WaveError::PinnedSuspected {
            c,
            reason: "converged velocity below the pinning threshold".into(),
        });
    }
    let grid = ProfileGrid {
        z_min: init.z_min,
        z_max: init.z_max,
        h,
        phi1: (0..n).map(|k| x[3 * k]).collect(),
        phi2: (0..n).map(|k| x[3 * k + 1]).collect(),
        c,
    };
    ProfileSolution::finish(model, grid, Method::Newton, iterations)
}

/// Sum over arguments of `|∂F/∂X_i|`, sampled along a profile.
fn lipschitz_along(disc: &mut Discretization, phi1: &[f64]) -> WaveResult<f64> {
    let nl = disc.model.nonlinearity();
    let mut lip: f64 = 0.0;
    for k in (0..phi1.len()).step_by(4) {
        disc.fill_args(phi1, k);
        let mut row = 0.0;
        for i in 0..disc.args.len() {
            let mut a = disc.args.clone();
            if !nl.evaluable_everywhere() {
                a.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            }
            row += nl.partial(&a, i)?.abs();
        }
        lip = lip.max(row);
    }
    Ok(lip)
}

/// Explicit pseudo-time evolution in the co-moving frame,
/// `∂τ φ = RHS − c D φ`, with `c` chosen every step so that `φ1(0)` relaxes
/// to the phase level.
pub fn solve_pseudotime(
    model: &ModelDescriptor,
    init: &ProfileGrid,
    phase: PhaseCondition,
    tau_max: f64,
) -> WaveResult<ProfileSolution> {
    solve_pseudotime_tol(model, init, phase, tau_max, PSEUDOTIME_TOL)
}

pub fn solve_pseudotime_tol(
    model: &ModelDescriptor,
    init: &ProfileGrid,
    phase: PhaseCondition,
    tau_max: f64,
    tol: f64,
) -> WaveResult<ProfileSolution> {
    check_extent(init, model)?;
    let k0 = init.zero_index()?;
    let mut g = init.clone();
    g.clamp_values();
    let n = g.len();
    let h = g.h;
    let alpha0 = model.alpha0();
    let theta = phase.level;
    let mut disc = Discretization::new(model, h);
    let lip = lipschitz_along(&mut disc, &g.phi1)?.max(1.0);
    let mut rhs1 = vec![0.0; n];
    let mut rhs2 = vec![0.0; n];
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let mut tau = 0.0;
    let mut steps = 0usize;
    loop {
        for k in 0..n {
            rhs1[k] = alpha0 * (g.phi2[k] - g.phi1[k]);
            rhs2[k] = 2.0 * disc.f_at(&g.phi1, k)? + alpha0 * (g.phi1[k] - g.phi2[k]);
        }
        let dir = Upwind::of(g.c);
        for k in 0..n {
            d1[k] = derivative(&g.phi1, k, h, dir);
            d2[k] = derivative(&g.phi2, k, h, dir);
        }
        let mut r: f64 = 0.0;
        for k in 0..n {
            r = r
                .max((g.c * d1[k] - rhs1[k]).abs())
                .max((g.c * d2[k] - rhs2[k]).abs());
        }
        let phase_err = g.phi1[k0] - theta;
        if r <= tol && phase_err.abs() <= tol {
            break;
        }
        if tau > tau_max {
            return Err(WaveError::NonConvergence {
                iterations: steps,
                residual: r,
            });
        }
        // c enters the φ1 update at z = 0 affinely; solve for the value that
        // makes the phase error decay at PHASE_RATE
        if d1[k0].abs() < 1e-12 {
            return Err(WaveError::DomainTooSmall {
                z_min: g.z_min,
                z_max: g.z_max,
                reason: "profile is flat at z = 0; the front left the window".into(),
            });
        }
        let c_new = (rhs1[k0] + PHASE_RATE * phase_err) / d1[k0];
        if Upwind::of(c_new) != dir {
            // direction flip: recompute derivatives before stepping
            g.c = c_new;
            continue;
        }
        g.c = c_new;
        let dtau = 0.9 / (g.c.abs() / h + 2.0 * alpha0 + 2.0 * lip + PHASE_RATE);
        for k in 0..n {
            g.phi1[k] = (g.phi1[k] + dtau * (rhs1[k] - g.c * d1[k])).clamp(0.0, 1.0);
            g.phi2[k] = (g.phi2[k] + dtau * (rhs2[k] - g.c * d2[k])).clamp(0.0, 1.0);
        }
        tau += dtau;
        steps += 1;
        if steps.is_multiple_of(64) && (g.phi1[0] > 0.5 || g.phi1[n - 1] < 0.5) {
            return Err(WaveError::DomainTooSmall {
                z_min: g.z_min,
                z_max: g.z_max,
                reason: "phase drift could not be held; the front reached the domain end".into(),
            });
        }
    }
    ProfileSolution::finish(model, g, Method::Pseudotime, steps)
}

/// Stationary profile `c = 0`, `φ2 = φ1`, `F(φ1(z + r_i)) = 0` at every node,
/// by the damped fixed point `φ ← clamp(φ + ω F)` with `ω` small enough that
/// the map is order preserving.
///
/// For integer shifts with `1/h` integral the nodes split into independent
/// integer sublattices. The sublattice through `z = 0` is solved first and
/// its equilibrium is copied to the other offsets (a piecewise-constant
/// representative) before relaxing all nodes together; this avoids the
/// nearly neutral translation mode of intermediate offsets when the pinning
/// barrier is weak.
pub fn solve_stationary(
    model: &ModelDescriptor,
    init: &ProfileGrid,
) -> WaveResult<ProfileSolution> {
    solve_stationary_budget(model, init, 400_000)
}

pub fn solve_stationary_budget(
    model: &ModelDescriptor,
    init: &ProfileGrid,
    budget: usize,
) -> WaveResult<ProfileSolution> {
    let n = init.len();
    let h = init.h;
    let nl = model.nonlinearity();
    let a_star = crate::model::alpha_star(nl, ASSUMPTION_GRID)?;
    let omega = 0.9 / (0.5 * a_star).max(1e-3);
    let reach = 2.0 * model.stencil().r_star();
    let mut phi: Vec<f64> = init.phi1.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut iterations = 0;

    let per_site = (1.0 / h).round();
    let k0 = init.zero_index()?;
    if model.stencil().integer_only() && (per_site * h - 1.0).abs() < 1e-9 && per_site > 1.0 {
        let m = per_site as usize;
        let first = k0 % m;
        let chain: Vec<f64> = (first..n).step_by(m).map(|k| phi[k]).collect();
        let chain_zmin = init.z(first);
        let mut disc = Discretization::new(model, 1.0);
        let (solved, it) =
            relax_stationary(&mut disc, chain, chain_zmin, 1.0, budget, reach, omega)?;
        iterations += it;
        for (k, p) in phi.iter_mut().enumerate() {
            // nearest chain site, ties upward
            let j = ((k as f64 - first as f64) / m as f64 + 0.5).floor() as isize;
            *p = node_value(&solved, j);
        }
    }
    let mut disc = Discretization::new(model, h);
    let (phi, it) = relax_stationary(&mut disc, phi, init.z_min, h, budget, reach, omega)?;
    iterations += it;
    let grid = ProfileGrid {
        z_min: init.z_min,
        z_max: init.z_max,
        h,
        phi2: phi.clone(),
        phi1: phi,
        c: 0.0,
    };
    if grid.limit_defect() > LIMIT_TOL {
        return Err(WaveError::NoStationaryProfile(format!(
            "stationary state does not connect 0 to 1 (limit defect {:.3e})",
            grid.limit_defect()
        )));
    }
    ProfileSolution::finish(model, grid, Method::Stationary, iterations)
}

fn relax_stationary(
    disc: &mut Discretization,
    mut phi: Vec<f64>,
    z_min: f64,
    h: f64,
    budget: usize,
    max_drift: f64,
    omega: f64,
) -> WaveResult<(Vec<f64>, usize)> {
    let n = phi.len();
    let crossing = |phi: &[f64]| -> Option<f64> {
        let j = phi.iter().position(|&v| v >= 0.5)?;
        if j == 0 {
            return Some(z_min);
        }
        let frac = (0.5 - phi[j - 1]) / (phi[j] - phi[j - 1]);
        Some(z_min + (j as f64 - 1.0 + frac) * h)
    };
    let start = crossing(&phi);
    let mut f = vec![0.0; n];
    let mut iterations = 0;
    let mut polish_at = POLISH_START;
    loop {
        let mut r: f64 = 0.0;
        for (k, fk) in f.iter_mut().enumerate() {
            *fk = disc.f_at(&phi, k)?;
            r = r.max(2.0 * fk.abs());
        }
        if r <= STATIONARY_TOL {
            return Ok((phi, iterations));
        }
        // the slowest fixed-point mode is the weak translation mode; finish
        // with Newton once close
        if r <= polish_at {
            match stationary_newton(disc, &phi)? {
                Some(p) if monotone(&p) => {
                    phi = p;
                    continue;
                }
                _ => polish_at *= 0.01,
            }
        }
        if iterations >= budget {
            return Err(WaveError::NoStationaryProfile(format!(
                "fixed point not converged after {iterations} iterations (residual {r:.3e}); \
                 the front is probably depinned"
            )));
        }
        for (p, fk) in phi.iter_mut().zip(&f) {
            *p = (*p + omega * fk).clamp(0.0, 1.0);
        }
        iterations += 1;
        if iterations % 256 == 0 {
            match (start, crossing(&phi)) {
                (Some(a), Some(b)) if (a - b).abs() <= max_drift => {}
                _ => {
                    return Err(WaveError::NoStationaryProfile(
                        "the front drifts under the fixed-point iteration; depinned regime".into(),
                    ))
                }
            }
        }
    }
}

const POLISH_START: f64 = 1e-5;

fn monotone(phi: &[f64]) -> bool {
    phi.windows(2).all(|w| w[1] - w[0] >= -MONOTONE_TOL)
}

/// Newton on `F(φ(z_k + r_i)) = 0` with Armijo damping. Returns `None`
/// when the iteration fails to reduce the residual.
fn stationary_newton(disc: &mut Discretization, phi: &[f64]) -> WaveResult<Option<Vec<f64>>> {
    let n = phi.len();
    let nl = disc.model.nonlinearity();
    let eval = |disc: &mut Discretization, p: &[f64], out: &mut [f64]| -> WaveResult<f64> {
        let mut r: f64 = 0.0;
        for (k, o) in out.iter_mut().enumerate() {
            *o = disc.f_at(p, k)?;
            r = r.max(2.0 * o.abs());
        }
        Ok(r)
    };
    let mut x = phi.to_vec();
    let mut f = vec![0.0; n];
    let mut ft = vec![0.0; n];
    let mut r = eval(disc, &x, &mut f)?;
    for _ in 0..30 {
        if r <= 0.1 * STATIONARY_TOL {
            break;
        }
        let mut jac = BandMatrix::zeros(n, disc.reach, disc.reach);
        for k in 0..n {
            disc.fill_args(&x, k);
            let mut a = disc.args.clone();
            if !nl.evaluable_everywhere() {
                a.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            }
            for (i, t) in disc.taps.clone().iter().enumerate() {
                let g = nl.partial(&a, i)?;
                let j = k as isize + t.q;
                for (jj, w) in [(j, 1.0 - t.w), (j + 1, t.w)] {
                    if w != 0.0 && jj >= 0 && (jj as usize) < n {
                        let jj = jj as usize;
                        let cur = jac.get(k, jj);
                        jac.set(k, jj, cur + g * w);
                    }
                }
            }
        }
        let Ok(lu) = jac.factor() else {
            return Ok(None);
        };
        let mut delta: Vec<f64> = f.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut delta);
        if delta.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = x
                .iter()
                .zip(&delta)
                .map(|(a, d)| (a + lambda * d).clamp(0.0, 1.0))
                .collect();
            let rt = eval(disc, &trial, &mut ft)?;
            if rt < (1.0 - 1e-4 * lambda) * r {
                x = trial;
                std::mem::swap(&mut f, &mut ft);
                r = rt;
                break;
            }
            lambda *= 0.5;
            if lambda < ARMIJO_MIN_STEP {
                return Ok(None);
            }
        }
    }
    Ok((r <= STATIONARY_TOL).then_some(x))
}

/// Averages lattice snapshots in bins of width `h` around grid nodes, using
/// `z = i − x_f(t)` with `x_f` the level crossing; on a traveling wave this
/// is `i + c t` up to the phase constant.
pub fn extract_from_lattice(
    sim: &SimOutput,
    c: f64,
    window: (f64, f64),
    layout: GridLayout,
) -> WaveResult<ProfileGrid> {
    if c.abs() <= PINNING_THRESHOLD {
        return Err(WaveError::Precondition(format!(
            "extraction needs a moving front, |c| = {} ≤ {PINNING_THRESHOLD}",
            c.abs()
        )));
    }
    let n = layout.len();
    let z_min = layout.z_min();
    let h = layout.h;
    let mut s1 = vec![0.0; n];
    let mut s2 = vec![0.0; n];
    let mut cnt = vec![0usize; n];
    for snap in sim
        .snapshots
        .iter()
        .filter(|s| s.t >= window.0 - 1e-12 && s.t <= window.1 + 1e-12)
    {
        let state = LatticeState {
            t: snap.t,
            u: snap.u.clone(),
            xi: snap.xi.clone(),
            boundary: sim.state.boundary,
            offset: snap.offset,
        };
        let xf = front_position(&state, sim.trace.level)?;
        for (i, (u, xi)) in snap.u.iter().zip(&snap.xi).enumerate() {
            let z = (i as i64 + snap.offset) as f64 - xf;
            let k = ((z - z_min) / h).round();
            if k >= 0.0 && (k as usize) < n {
                let k = k as usize;
                s1[k] += u;
                s2[k] += xi;
                cnt[k] += 1;
            }
        }
    }
    let filled: Vec<usize> = (0..n).filter(|&k| cnt[k] > 0).collect();
    if filled.is_empty() {
        return Err(WaveError::Coverage { empty: n, z: z_min });
    }
    let mut phi1 = vec![f64::NAN; n];
    let mut phi2 = vec![f64::NAN; n];
    for &k in &filled {
        phi1[k] = s1[k] / cnt[k] as f64;
        phi2[k] = s2[k] / cnt[k] as f64;
    }
    // short interior gaps are bridged linearly; anything else is a coverage hole
    let mut empty = 0;
    let mut first_empty = None;
    for k in 0..n {
        if cnt[k] > 0 {
            continue;
        }
        let lo = (0..k).rev().find(|&j| cnt[j] > 0);
        let hi = (k + 1..n).find(|&j| cnt[j] > 0);
        match (lo, hi) {
            (Some(a), Some(b)) if b - a <= 4 => {
                let w = (k - a) as f64 / (b - a) as f64;
                phi1[k] = (1.0 - w) * phi1[a] + w * phi1[b];
                phi2[k] = (1.0 - w) * phi2[a] + w * phi2[b];
            }
            _ => {
                empty += 1;
                first_empty.get_or_insert(z_min + k as f64 * h);
            }
        }
    }
    if empty > 0 {
        return Err(WaveError::Coverage {
            empty,
            z: first_empty.unwrap_or(z_min),
        });
    }
    ProfileGrid::new(z_min, h, phi1, phi2, c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullResult {
    pub c_limit: f64,
    pub table: Vec<(usize, f64)>,
    pub extrapolated: bool,
    pub warning: Option<String>,
}

/// Rotation-number velocities `c_p`, `p = 1/M`, extrapolated to `p = 0`.
///
/// The last two entries are combined assuming an error linear in `p`. When
/// successive differences do not shrink the last `c_p` is returned with a
/// warning.
pub fn hull_extrapolate(
    model: &ModelDescriptor,
    m_list: &[usize],
    t_end: f64,
    dt: f64,
) -> WaveResult<HullResult> {
    let report = check_assumptions(model, ASSUMPTION_GRID)?;
    if !report.gate_b() {
        return Err(WaveError::Gate(format!(
            "(B) bistable structure required for hull extrapolation: {}",
            report.bistable_error.clone().unwrap_or_default()
        )));
    }
    if m_list.len() < 3 || m_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(WaveError::Precondition(
            "M list must be increasing with at least three entries".into(),
        ));
    }
    let mut table = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let est = rotation_number(model, m, t_end, dt)?;
        table.push((m, est.c_p));
    }
    let cs: Vec<f64> = table.iter().map(|t| t.1).collect();
    let last = *cs.last().unwrap();
    if cs.iter().all(|c| c.abs() < PINNING_THRESHOLD) {
        return Ok(HullResult {
            c_limit: 0.0,
            table,
            extrapolated: false,
            warning: None,
        });
    }
    let diffs: Vec<f64> = cs.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let shrinking = diffs.windows(2).all(|d| d[1] <= d[0] + 1e-8);
    if !shrinking {
        return Ok(HullResult {
            c_limit: last,
            table,
            extrapolated: false,
            warning: Some("Cauchy differences are not decreasing; returning the last c_p".into()),
        });
    }
    let k = cs.len();
    let (m1, m2) = (m_list[k - 2] as f64, m_list[k - 1] as f64);
    let (p1, p2) = (1.0 / m1, 1.0 / m2);
    let c_limit = (p1 * cs[k - 1] - p2 * cs[k - 2]) / (p1 - p2);
    Ok(HullResult {
        c_limit,
        table,
        extrapolated: true,
        warning: None,
    })
}

/// Velocities of one solver on grids `h`, `h/2`, `h/4` and their two-level
/// Richardson extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichardsonVelocity {
    pub hs: Vec<f64>,
    pub cs: Vec<f64>,
    pub c: f64,
}

/// The upwind velocity error is first order in `h` with a clean expansion,
/// so `(8 c_{h/4} − 6 c_{h/2} + c_h)/3` removes the `h` and `h²` terms.
/// Each refinement is warm-started from the previous solution.
pub fn richardson_velocity(
    model: &ModelDescriptor,
    sol: &ProfileSolution,
    tol: f64,
    max_iter: usize,
    tau_max: f64,
) -> WaveResult<RichardsonVelocity> {
    if sol.pinned {
        return Ok(RichardsonVelocity {
            hs: vec![sol.grid.h],
            cs: vec![0.0],
            c: 0.0,
        });
    }
    let phase = PhaseCondition::new(sol.phase_level)?;
    let mut hs = vec![sol.grid.h];
    let mut cs = vec![sol.c()];
    let mut prev = sol.grid.clone();
    for _ in 0..2 {
        let layout = prev.layout();
        let fine = GridLayout {
            n_left: 2 * layout.n_left,
            n_right: 2 * layout.n_right,
            h: 0.5 * layout.h,
        };
        let guess = prev.resample(fine);
        let next = match sol.method {
            Method::Pseudotime => solve_pseudotime(model, &guess, phase, tau_max)?,
            _ => solve_newton(model, &guess, phase, tol, max_iter)?,
        };
        hs.push(next.grid.h);
        cs.push(next.c());
        prev = next.grid;
    }
    let c = (8.0 * cs[2] - 6.0 * cs[1] + cs[0]) / 3.0;
    Ok(RichardsonVelocity { hs, cs, c })
}

/// Lattice settings for the front-tracking stage of the cold pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeRun {
    pub m: usize,
    pub t_end: f64,
    /// Defaults to `dt_max = 0.5/α0`.
    pub dt: Option<f64>,
    pub init: InitStyle,
}

impl Default for LatticeRun {
    fn default() -> Self {
        Self {
            m: 400,
            t_end: 200.0,
            dt: None,
            init: InitStyle::Step,
        }
    }
}

/// Front-tracking velocity on a fixed-front chain.
#[derive(Debug, Clone)]
pub struct FrontRun {
    pub fit: crate::lattice::VelocityFit,
    pub output: SimOutput,
}

/// Runs the chain and fits the trailing half of the front trace.
pub fn track_front(
    model: &ModelDescriptor,
    run: &LatticeRun,
    level: f64,
    snapshots_from: Option<f64>,
) -> WaveResult<FrontRun> {
    let dt = run.dt.unwrap_or_else(|| model.dt_max());
    let mut opts = SimOptions::new(run.t_end, dt, level);
    let steps = (run.t_end / dt).ceil().max(1.0) as usize;
    opts.sample_every = (steps / 2000).max(1);
    if let Some(t0) = snapshots_from {
        opts.snapshot_every = Some((steps / 400).max(1));
        opts.snapshot_from = t0;
    }
    let state = init_front(run.m, run.init);
    if run.m < 2 * BOUNDARY_GUARD + 3 {
        return Err(WaveError::Precondition(format!(
            "front runs need at least {} sites",
            2 * BOUNDARY_GUARD + 3
        )));
    }
    let output = simulate(model, state, &opts)?;
    let fit = measure_velocity(&output.trace, 0.5)?;
    Ok(FrontRun { fit, output })
}

/// Which solver chain `solve_wave` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    /// Lattice extraction then Newton, pseudo-time fallback, stationary
    /// reroute when pinned.
    #[default]
    Auto,
    Newton,
    Pseudotime,
    Stationary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveOptions {
    pub h: Option<f64>,
    pub z_min: Option<f64>,
    pub z_max: Option<f64>,
    pub phase_level: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub tau_max: f64,
    pub method: MethodChoice,
    pub lattice: LatticeRun,
}

impl Default for WaveOptions {
    fn default() -> Self {
        Self {
            h: None,
            z_min: None,
            z_max: None,
            phase_level: None,
            tol: NEWTON_TOL,
            max_iter: 50,
            tau_max: 5000.0,
            method: MethodChoice::Auto,
            lattice: LatticeRun::default(),
        }
    }
}

impl WaveOptions {
    fn layout(&self, model: &ModelDescriptor, c: f64) -> WaveResult<GridLayout> {
        let h = self.h.unwrap_or_else(|| default_h(model));
        match (self.z_min, self.z_max) {
            (Some(a), Some(b)) => GridLayout::from_extent(a, b, h),
            (a, b) => {
                let auto = layout_for(model, c, h)?;
                GridLayout::from_extent(a.unwrap_or(auto.z_min()), b.unwrap_or(auto.z_max()), h)
            }
        }
    }

    fn fixed_domain(&self) -> bool {
        self.z_min.is_some() || self.z_max.is_some()
    }

    fn phase(&self, b: f64) -> WaveResult<PhaseCondition> {
        PhaseCondition::new(self.phase_level.unwrap_or(b))
    }
}

/// Re-solves on enlarged domains while the limit check fails.
fn with_enlargement<F>(
    model: &ModelDescriptor,
    opts: &WaveOptions,
    mut grid: ProfileGrid,
    mut solve: F,
) -> WaveResult<ProfileSolution>
where
    F: FnMut(&ProfileGrid) -> WaveResult<ProfileSolution>,
{
    check_extent(&grid, model)?;
    for attempt in 0..3 {
        let sol = solve(&grid)?;
        if sol.grid.limit_defect() <= LIMIT_TOL {
            return Ok(sol);
        }
        if opts.fixed_domain() || attempt == 2 {
            return Err(WaveError::DomainTooSmall {
                z_min: sol.grid.z_min,
                z_max: sol.grid.z_max,
                reason: format!(
                    "limit values missed by {:.3e} on the outer 10%",
                    sol.grid.limit_defect()
                ),
            });
        }
        grid = sol.grid.resample(sol.grid.layout().enlarged(1.5));
    }
    unreachable!()
}

fn stationary_from_guess(
    model: &ModelDescriptor,
    opts: &WaveOptions,
    level: f64,
) -> WaveResult<ProfileSolution> {
    let layout = opts.layout(model, 0.0)?;
    let guess = ProfileGrid::tanh_guess(layout, level, 2.0, 0.0);
    check_extent(&guess, model)?;
    solve_stationary(model, &guess)
}

/// Newton with a pseudo-time fallback, from `guess`.
fn newton_or_pseudotime(
    model: &ModelDescriptor,
    opts: &WaveOptions,
    phase: PhaseCondition,
    guess: ProfileGrid,
) -> WaveResult<ProfileSolution> {
    with_enlargement(model, opts, guess, |g| {
        match solve_newton(model, g, phase, opts.tol, opts.max_iter) {
            Ok(s) => Ok(s),
            Err(e @ WaveError::PinnedSuspected { .. }) => Err(e),
            Err(_) => {
                let pt = solve_pseudotime(model, g, phase, opts.tau_max)?;
                // polish to the Newton tolerance when possible
                Ok(solve_newton(model, &pt.grid, phase, opts.tol, opts.max_iter).unwrap_or(pt))
            }
        }
    })
}

/// Cold-start pipeline: lattice front tracking, then a stationary solve if
/// pinned, otherwise extraction followed by Newton (pseudo-time fallback).
pub fn solve_wave(model: &ModelDescriptor, opts: &WaveOptions) -> WaveResult<ProfileSolution> {
    let b = gate(model)?;
    let phase = opts.phase(b)?;
    match opts.method {
        MethodChoice::Stationary => stationary_from_guess(model, opts, phase.level),
        MethodChoice::Pseudotime => {
            let c0 = if model.stencil().integer_only() {
                track_front(model, &opts.lattice, b, None)?.fit.c
            } else {
                0.0
            };
            let layout = opts.layout(model, c0)?;
            let guess = ProfileGrid::tanh_guess(layout, phase.level, 2.0, c0);
            with_enlargement(model, opts, guess, |g| {
                solve_pseudotime(model, g, phase, opts.tau_max)
            })
        }
        MethodChoice::Newton | MethodChoice::Auto => {
            if !model.stencil().integer_only() {
                let layout = opts.layout(model, 0.0)?;
                let guess = ProfileGrid::tanh_guess(layout, phase.level, 2.0, 0.0);
                let pt = with_enlargement(model, opts, guess, |g| {
                    solve_pseudotime(model, g, phase, opts.tau_max)
                });
                return match pt {
                    Ok(s) if s.c().abs() < PINNING_THRESHOLD => {
                        stationary_from_guess(model, opts, phase.level)
                    }
                    Ok(s) => {
                        let g = s.grid.clone();
                        Ok(solve_newton(model, &g, phase, opts.tol, opts.max_iter).unwrap_or(s))
                    }
                    Err(e) => Err(e),
                };
            }
            let t0 = opts.lattice.t_end * 0.5;
            let run = track_front(model, &opts.lattice, phase.level, Some(t0))?;
            if run.fit.pinned() {
                return stationary_from_guess(model, opts, phase.level);
            }
            let c = run.fit.c;
            let layout = opts.layout(model, c)?;
            let guess = extract_from_lattice(&run.output, c, (t0, opts.lattice.t_end), layout)
                .unwrap_or_else(|_| ProfileGrid::tanh_guess(layout, phase.level, 2.0, c));
            match newton_or_pseudotime(model, opts, phase, guess) {
                Err(WaveError::PinnedSuspected { .. }) => {
                    stationary_from_guess(model, opts, phase.level)
                }
                other => other,
            }
        }
    }
}

/// One continuation step: Newton warm-started from `prev`, then the
/// stationary solver, then the cold pipeline.
pub fn continue_step(
    model: &ModelDescriptor,
    prev: &ProfileSolution,
    opts: &WaveOptions,
) -> WaveResult<ProfileSolution> {
    let b = gate(model)?;
    let phase = opts.phase(b)?;
    if !prev.pinned {
        let layout = opts.layout(model, prev.c())?;
        let guess = prev.grid.resample(layout);
        match newton_or_pseudotime(model, opts, phase, guess) {
            Ok(s) => return Ok(s),
            Err(WaveError::Gate(g)) => return Err(WaveError::Gate(g)),
            Err(_) => {}
        }
    }
    let layout = opts.layout(model, 0.0)?;
    let guess = if prev.pinned {
        prev.grid.resample(layout)
    } else {
        ProfileGrid::tanh_guess(layout, phase.level, 2.0, 0.0)
    };
    match solve_stationary(model, &guess) {
        Ok(s) => Ok(s),
        Err(_) => solve_wave(model, opts),
    }
}

/// Natural continuation in one model parameter.
pub fn continue_in_parameter(
    model: &ModelDescriptor,
    param: &str,
    values: &[f64],
    seed: &ProfileSolution,
    opts: &WaveOptions,
) -> WaveResult<Vec<ProfileSolution>> {
    let mut out: Vec<ProfileSolution> = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let attach = |e: WaveError| WaveError::Continuation {
            param: param.to_string(),
            value: v,
            source: Box::new(e),
        };
        let m = model.with_param(param, v).map_err(|e| attach(e.into()))?;
        let prev = if i == 0 { seed } else { &out[i - 1] };
        let sol = if i == 0 {
            revalidate(&m, seed, opts).map_err(attach)?
        } else {
            continue_step(&m, prev, opts).map_err(attach)?
        };
        out.push(sol);
    }
    Ok(out)
}

/// Re-solves from a converged seed (a no-op up to one Newton check).
fn revalidate(
    model: &ModelDescriptor,
    seed: &ProfileSolution,
    opts: &WaveOptions,
) -> WaveResult<ProfileSolution> {
    if seed.pinned {
        return solve_stationary(model, &seed.grid);
    }
    let phase = PhaseCondition::new(seed.phase_level)?;
    solve_newton(model, &seed.grid, phase, opts.tol, opts.max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fk(l: f64) -> ModelDescriptor {
        ModelDescriptor::classical_fk(l, 0.005).unwrap()
    }

    fn cubic(b: f64) -> ModelDescriptor {
        ModelDescriptor::cubic_bistable(1.0, b, 1.0, 0.05).unwrap()
    }

    fn constant_grid(v: f64, c: f64) -> ProfileGrid {
        let layout = GridLayout {
            n_left: 200,
            n_right: 200,
            h: 0.1,
        };
        ProfileGrid::new(
            layout.z_min(),
            0.1,
            vec![v; layout.len()],
            vec![v; layout.len()],
            c,
        )
        .unwrap()
    }

    #[test]
    fn residual_vanishes_on_constant_states() {
        let model = fk(0.0);
        let g = constant_grid(0.0, 0.7);
        let (r1, r2) = profile_residual(&g, &model).unwrap();
        // nodes near the right end see the ghost value 1
        let interior = g.len() - 12;
        assert!(r1[..interior]
            .iter()
            .chain(&r2[..interior])
            .all(|v| v.abs() < 1e-14));

        let b = find_interior_zero(model.nonlinearity(), ROOT_TOL)
            .unwrap()
            .b;
        let g = constant_grid(b, -1.3);
        let (r1, r2) = profile_residual(&g, &model).unwrap();
        assert!(r1[12..g.len() - 12]
            .iter()
            .chain(&r2[12..g.len() - 12])
            .all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn residual_hand_evaluation() {
        // φ1 linear ramp, φ2 = φ1 + const: check one node by hand
        let model = cubic(0.25);
        let n = 401;
        let z_min = -20.0;
        let h = 0.1;
        let phi1: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
        let phi2: Vec<f64> = phi1.iter().map(|v| (v + 0.01).min(1.0)).collect();
        let c = 0.4;
        let g = ProfileGrid::new(z_min, h, phi1.clone(), phi2.clone(), c).unwrap();
        let (r1, r2) = profile_residual(&g, &model).unwrap();
        let k = 150;
        let a0 = model.alpha0();
        let slope = 1.0 / ((n - 1) as f64 * h);
        assert!((r1[k] - (c * slope - a0 * 0.01)).abs() < 1e-12);
        let x = [phi1[k], phi1[k + 10], phi1[k - 10]];
        let f = (x[1] + x[2] - 2.0 * x[0]) + x[0] * (x[0] - 0.25) * (1.0 - x[0]);
        assert!((r2[k] - (c * slope - 2.0 * f + a0 * 0.01)).abs() < 1e-12);
    }

    #[test]
    fn fractional_shift_interpolates() {
        let rule = crate::model::CustomRule::new(
            "probe",
            2,
            crate::model::Extension::DiagonalPeriodic,
            |x| x[1] - x[0],
        );
        let model = ModelDescriptor::custom(rule, vec![0.0, 0.25], 0.05).unwrap();
        let h = 0.1;
        let n = 401;
        let phi: Vec<f64> = (0..n).map(|k| (k as f64 * h / 40.0).powi(2)).collect();
        let g = ProfileGrid::new(-20.0, h, phi.clone(), phi.clone(), 0.0).unwrap();
        let (_, r2) = profile_residual(&g, &model).unwrap();
        let k = 100;
        // φ(z + 0.25) interpolated between nodes k+2 and k+3
        let interp = 0.5 * phi[k + 2] + 0.5 * phi[k + 3];
        assert!((r2[k] + 2.0 * (interp - phi[k])).abs() < 1e-12);
    }

    #[test]
    fn grid_zero_node_and_resample() {
        let l = GridLayout::from_extent(-3.0, 2.0, 0.1).unwrap();
        let g = ProfileGrid::tanh_guess(l, 0.3, 2.0, 0.0);
        let k0 = g.zero_index().unwrap();
        assert!((g.phi1[k0] - 0.3).abs() < 1e-12);
        let fine = g.resample(GridLayout {
            n_left: 60,
            n_right: 40,
            h: 0.05,
        });
        assert!((fine.phi1[60] - 0.3).abs() < 1e-12);
        assert_eq!(fine.phi1[0], g.phi1[0]);
    }

    #[test]
    fn tail_rates_match_hand_roots() {
        // cubic, c = 0: 2 G(λ) = 0 with G = 2(cosh λ − 1) − κ b
        let model = cubic(0.25);
        let lam = tail_rate(&model, 0.0, 0.0, true).unwrap().unwrap();
        let expected = (1.0 + 0.125_f64).acosh();
        assert!((lam - expected).abs() < 1e-5, "{lam} vs {expected}");
    }

    #[test]
    fn newton_cubic_quarter() {
        let model = cubic(0.25);
        let phase = PhaseCondition::at_interior_zero(&model).unwrap();
        let layout = layout_for(&model, 0.3, 0.1).unwrap();
        let guess = ProfileGrid::tanh_guess(layout, phase.level, 2.0, 0.3);
        let sol = solve_newton(&model, &guess, phase, 1e-10, 50).unwrap();
        assert!(sol.c() > 0.0, "c = {}", sol.c());
        assert!(sol.residual_sup <= 1e-10);
        let (r1, r2) = profile_residual(&sol.grid, &model).unwrap();
        assert!(sup(&r1).max(sup(&r2)) < 1e-9);
        assert!(sol.monotone_defect >= -1e-8);
        assert!(first_equation_defect(&sol.grid, &model) < 1e-9);
    }

    #[test]
    fn newton_symmetric_cubic_is_pinned_or_still() {
        let model = cubic(0.5);
        let phase = PhaseCondition::new(0.5).unwrap();
        let layout = layout_for(&model, 0.0, 0.1).unwrap();
        let guess = ProfileGrid::tanh_guess(layout, 0.5, 2.0, 0.05);
        match solve_newton(&model, &guess, phase, 1e-10, 50) {
            Ok(s) => assert!(s.c().abs() < 1e-6),
            Err(WaveError::PinnedSuspected { .. }) | Err(WaveError::NonConvergence { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn pseudotime_agrees_with_newton_on_cubic() {
        let model = cubic(0.25);
        let phase = PhaseCondition::at_interior_zero(&model).unwrap();
        let layout = layout_for(&model, 0.3, 0.1).unwrap();
        let guess = ProfileGrid::tanh_guess(layout, phase.level, 2.0, 0.0);
        let pt = solve_pseudotime(&model, &guess, phase, 5000.0).unwrap();
        let nw = solve_newton(&model, &guess, phase, 1e-10, 50).unwrap();
        assert!(
            (pt.c() - nw.c()).abs() <= 1e-3 * nw.c().abs(),
            "{} {}",
            pt.c(),
            nw.c()
        );
        // from the Newton fixed point the freezing iteration stops at once
        let again = solve_pseudotime(&model, &nw.grid, phase, 10.0).unwrap();
        assert_eq!(again.iterations, 0);
    }

    #[test]
    fn stationary_fk_symmetric() {
        let model = fk(0.0);
        let layout = layout_for(&model, 0.0, 0.1).unwrap();
        let guess = ProfileGrid::tanh_guess(layout, 0.5, 2.0, 0.0);
        let sol = solve_stationary(&model, &guess).unwrap();
        assert!(sol.residual_sup <= 1e-8);
        assert_eq!(sol.c(), 0.0);
        assert!(sol.pinned);
        assert_eq!(sol.grid.phi1, sol.grid.phi2);
        assert_eq!(sol.note.as_deref(), Some(STATIONARY_NOTE));
    }

    #[test]
    fn stationary_constant_and_depinned() {
        let model = fk(0.0);
        let g = constant_grid(0.0, 0.0);
        // a zero profile is stationary except next to the right ghost, so the
        // solver runs; it must still not produce a 0 → 1 connection failure
        let _ = solve_stationary_budget(&model, &g, 10);
        let err = solve_stationary(
            &fk(0.4),
            &ProfileGrid::tanh_guess(
                GridLayout {
                    n_left: 200,
                    n_right: 200,
                    h: 0.1,
                },
                0.5,
                2.0,
                0.0,
            ),
        )
        .unwrap_err();
        assert!(matches!(err, WaveError::NoStationaryProfile(_)), "{err:?}");
    }

    #[test]
    fn extraction_recovers_synthetic_wave() {
        use crate::lattice::{BoundaryMode, FrontTrace, Snapshot};
        let c = -0.8;
        let phi = |z: f64| 0.5 * (1.0 + (z / 3.0).tanh());
        let psi = |z: f64| phi(z) + 0.02 * (1.0 - (z / 3.0).tanh().powi(2));
        let m = 200;
        let mut snaps = Vec::new();
        for s in 0..400 {
            let t = s as f64 * 0.0731;
            let u: Vec<f64> = (0..m).map(|i| phi(i as f64 - 100.0 + c * t)).collect();
            let xi: Vec<f64> = (0..m).map(|i| psi(i as f64 - 100.0 + c * t)).collect();
            snaps.push(Snapshot {
                t,
                offset: 0,
                u,
                xi,
            });
        }
        let state = LatticeState::new(
            snaps[0].u.clone(),
            snaps[0].xi.clone(),
            BoundaryMode::FixedFront,
        )
        .unwrap();
        let sim = SimOutput {
            state,
            trace: FrontTrace::new(0.5),
            snapshots: snaps,
        };
        let layout = GridLayout {
            n_left: 200,
            n_right: 200,
            h: 0.1,
        };
        let g = extract_from_lattice(&sim, c, (0.0, 100.0), layout).unwrap();
        for k in 0..g.len() {
            let z = g.z(k);
            assert!((g.phi1[k] - phi(z)).abs() < 2e-3, "z = {z}");
            assert!((g.phi2[k] - psi(z)).abs() < 2e-3);
        }
        assert!(matches!(
            extract_from_lattice(&sim, 0.0, (0.0, 100.0), layout),
            Err(WaveError::Precondition(_))
        ));
    }

    #[test]
    fn hull_gates_on_bistability() {
        let rule = crate::model::CustomRule::new(
            "constant",
            3,
            crate::model::Extension::DiagonalPeriodic,
            |_| 0.3,
        );
        let model = ModelDescriptor::custom(rule, vec![0.0, 1.0, -1.0], 0.005).unwrap();
        assert!(matches!(
            hull_extrapolate(&model, &[8, 16, 32], 10.0, 0.005),
            Err(WaveError::Gate(_))
        ));
    }

    #[test]
    fn hull_symmetric_fk_is_zero() {
        let r = hull_extrapolate(&fk(0.0), &[8, 16, 32], 40.0, 0.005).unwrap();
        assert_eq!(r.c_limit, 0.0);
        assert!(r.table.iter().all(|(_, c)| c.abs() < 1e-9));
    }
}
