//! Nonlinearities, shift stencils and the structural assumption checks.
//!
//! A [`ModelDescriptor`] bundles the coupling function `F`, the stencil of
//! shifts `r_0 = 0, r_1, .., r_N` it is evaluated on, and the mass `m0`
//! (equivalently the relaxation rate `α0 = 1/(2 m0)`).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported number of neighbours `N`.
pub const MAX_NEIGHBOURS: usize = 16;

/// Tolerance of the interior-zero bisection.
pub const ROOT_TOL: f64 = 1e-12;

const FD_STEP: f64 = 1e-6;
const BETA_RESOLUTION: f64 = 1e-4;
const BETA_LINE_POINTS: usize = 33;
const ZERO_SCAN_POINTS: usize = 2000;
const MAX_COMBOS: usize = 3125;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("F evaluated outside [0,1]^(N+1) at {x:?} but no extension is declared")]
    Domain { x: Vec<f64> },

    #[error("F returned a non-finite value at {x:?}")]
    NonFinite { x: Vec<f64> },

    #[error("F expects {expected} arguments, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("invalid stencil: {0}")]
    Stencil(String),

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("f is not bistable on (0,1): {0}")]
    NotBistable(String),

    #[error("f has {count} interior sign changes on (0,1); refusing to pick one")]
    AmbiguousZero { count: usize },

    #[error("extension impossible: F(0,..,0) = {f0} differs from F(1,..,1) = {f1}")]
    ExtensionPrecondition { f0: f64, f1: f64 },

    #[error("F has no declared extension outside [0,1]^(N+1)")]
    ExtensionMissing,
}

type ModelResult<T> = std::result::Result<T, ModelError>;

/// Mass and relaxation rate. `m0` is the source of truth, `alpha0 = 1/(2 m0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    m0: f64,
    alpha0: f64,
}

impl ModelParams {
    pub fn new(m0: f64) -> ModelResult<Self> {
        if !(m0.is_finite() && m0 > 0.0) {
            return Err(ModelError::Params(format!(
                "m0 must be finite and > 0, got {m0}"
            )));
        }
        Ok(Self {
            m0,
            alpha0: 1.0 / (2.0 * m0),
        })
    }

    pub fn from_alpha0(alpha0: f64) -> ModelResult<Self> {
        if !(alpha0.is_finite() && alpha0 > 0.0) {
            return Err(ModelError::Params(format!(
                "alpha0 must be finite and > 0, got {alpha0}"
            )));
        }
        Self::new(1.0 / (2.0 * alpha0))
    }

    pub fn m0(&self) -> f64 {
        self.m0
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }
}

/// Ordered shifts `r_0 = 0, r_1, .., r_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftStencil {
    shifts: Vec<f64>,
    r_star: f64,
    integer_only: bool,
}

impl ShiftStencil {
    pub fn new(shifts: Vec<f64>) -> ModelResult<Self> {
        if shifts.is_empty() || shifts[0] != 0.0 {
            return Err(ModelError::Stencil("r_0 must be 0".into()));
        }
        if shifts.len() > MAX_NEIGHBOURS + 1 {
            return Err(ModelError::Stencil(format!(
                "at most {MAX_NEIGHBOURS} neighbours supported, got {}",
                shifts.len() - 1
            )));
        }
        if shifts.iter().any(|r| !r.is_finite()) {
            return Err(ModelError::Stencil("shifts must be finite".into()));
        }
        let r_star = shifts.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        if r_star <= 0.0 {
            return Err(ModelError::Stencil("r* = max |r_i| must be > 0".into()));
        }
        let integer_only = shifts.iter().all(|r| r.fract() == 0.0);
        Ok(Self {
            shifts,
            r_star,
            integer_only,
        })
    }

    /// The nearest-neighbour stencil `(0, +1, −1)`.
    pub fn nearest_neighbour() -> Self {
        Self::new(vec![0.0, 1.0, -1.0]).expect("valid stencil")
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn r_star(&self) -> f64 {
        self.r_star
    }

    pub fn integer_only(&self) -> bool {
        self.integer_only
    }

    /// Integer offsets, or `None` if some shift is fractional.
    pub fn integer_offsets(&self) -> Option<Vec<isize>> {
        self.integer_only
            .then(|| self.shifts.iter().map(|&r| r as isize).collect())
    }

    pub fn negated(&self) -> Self {
        Self::new(
            self.shifts
                .iter()
                .map(|r| if *r == 0.0 { 0.0 } else { -r })
                .collect(),
        )
        .expect("negation keeps a valid stencil")
    }

    pub fn sign_class(&self) -> ShiftSigns {
        if self.shifts.iter().all(|&r| r <= 0.0) {
            ShiftSigns::AllNonpositive
        } else if self.shifts.iter().all(|&r| r >= 0.0) {
            ShiftSigns::AllNonnegative
        } else {
            ShiftSigns::Mixed
        }
    }
}

/// Sign pattern of the shifts, as used by assumptions (D±)(i).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftSigns {
    AllNonpositive,
    AllNonnegative,
    Mixed,
}

/// How a custom rule behaves outside the box `[0,1]^(N+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extension {
    /// Box only; evaluation outside is a domain error.
    None,
    /// Arguments are clamped to the box.
    Clamped,
    /// The rule is defined on all of R^(N+1) and satisfies F(X + 1) = F(X).
    DiagonalPeriodic,
}

pub type RuleFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A user-supplied evaluation rule for `F`.
#[derive(Clone)]
pub struct CustomRule {
    name: String,
    arity: usize,
    rule: Arc<RuleFn>,
    extension: Extension,
}

impl CustomRule {
    pub fn new(
        name: impl Into<String>,
        arity: usize,
        extension: Extension,
        rule: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            arity,
            rule: Arc::new(rule),
            extension,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn extension(&self) -> Extension {
        self.extension
    }
}

impl fmt::Debug for CustomRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomRule")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .field("extension", &self.extension)
            .finish()
    }
}

/// The coupling function `F`.
#[derive(Debug, Clone)]
pub enum Nonlinearity {
    /// `F = X1 + X2 − 2 X0 − sin(2π(X0 − L)) − sin(2πL)`.
    ClassicalFk {
        l: f64,
    },
    /// `F = d (X1 + X2 − 2 X0) + κ X0 (X0 − b)(1 − X0)`.
    CubicBistable {
        d: f64,
        b_param: f64,
        kappa: f64,
    },
    Custom(CustomRule),
    /// `F̂(X) = −F(1 − X)`.
    Reflected(Box<Nonlinearity>),
}

impl Nonlinearity {
    pub fn arity(&self) -> usize {
        match self {
            Nonlinearity::ClassicalFk { .. } | Nonlinearity::CubicBistable { .. } => 3,
            Nonlinearity::Custom(rule) => rule.arity,
            Nonlinearity::Reflected(inner) => inner.arity(),
        }
    }

    pub fn kind_name(&self) -> String {
        match self {
            Nonlinearity::ClassicalFk { .. } => "classical_fk".into(),
            Nonlinearity::CubicBistable { .. } => "cubic_bistable".into(),
            Nonlinearity::Custom(rule) => format!("custom:{}", rule.name),
            Nonlinearity::Reflected(inner) => format!("reflected({})", inner.kind_name()),
        }
    }

    /// True when `F` can be evaluated anywhere in R^(N+1).
    pub fn evaluable_everywhere(&self) -> bool {
        match self {
            Nonlinearity::ClassicalFk { .. } | Nonlinearity::CubicBistable { .. } => true,
            Nonlinearity::Custom(rule) => rule.extension != Extension::None,
            Nonlinearity::Reflected(inner) => inner.evaluable_everywhere(),
        }
    }

    /// Evaluates `F(X)`.
    pub fn eval(&self, x: &[f64]) -> ModelResult<f64> {
        if x.len() != self.arity() {
            return Err(ModelError::Arity {
                expected: self.arity(),
                got: x.len(),
            });
        }
        let v = self.eval_unchecked(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ModelError::NonFinite { x: x.to_vec() })
        }
    }

    /// Evaluates `F(X)` with arguments clamped to `[0,1]` when `F` lives on
    /// the box only. Used by the profile solvers, whose unknowns live in
    /// `[0,1]` anyway.
    pub fn eval_in_box(&self, x: &[f64]) -> ModelResult<f64> {
        if self.evaluable_everywhere() {
            return self.eval(x);
        }
        let mut buf = [0.0; MAX_NEIGHBOURS + 1];
        let n = x.len().min(buf.len());
        for (b, &v) in buf.iter_mut().zip(x) {
            *b = v.clamp(0.0, 1.0);
        }
        self.eval(&buf[..n])
    }

    fn eval_unchecked(&self, x: &[f64]) -> ModelResult<f64> {
        Ok(match self {
            Nonlinearity::ClassicalFk { l } => {
                x[1] + x[2] - 2.0 * x[0] - (2.0 * PI * (x[0] - l)).sin() - (2.0 * PI * l).sin()
            }
            Nonlinearity::CubicBistable { d, b_param, kappa } => {
                d * (x[1] + x[2] - 2.0 * x[0]) + kappa * x[0] * (x[0] - b_param) * (1.0 - x[0])
            }
            Nonlinearity::Custom(rule) => match rule.extension {
                Extension::DiagonalPeriodic => (rule.rule)(x),
                Extension::None => {
                    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return Err(ModelError::Domain { x: x.to_vec() });
                    }
                    (rule.rule)(x)
                }
                Extension::Clamped => {
                    let clamped: Vec<f64> = x.iter().map(|v| v.clamp(0.0, 1.0)).collect();
                    (rule.rule)(&clamped)
                }
            },
            Nonlinearity::Reflected(inner) => {
                let mut buf = [0.0; MAX_NEIGHBOURS + 1];
                for (b, &v) in buf.iter_mut().zip(x) {
                    *b = 1.0 - v;
                }
                -inner.eval_unchecked(&buf[..x.len()])?
            }
        })
    }

    /// `f(v) = F(v, .., v)`.
    pub fn eval_diag(&self, v: f64) -> ModelResult<f64> {
        let x = vec![v; self.arity()];
        self.eval(&x)
    }

    /// Centered finite difference of `F` in coordinate `i`, step
    /// `1e-6·max(1, |X_i|)`.
    pub fn partial(&self, x: &[f64], i: usize) -> ModelResult<f64> {
        let step = FD_STEP * x[i].abs().max(1.0);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += step;
        xm[i] -= step;
        Ok((self.eval_for_probe(&xp)? - self.eval_for_probe(&xm)?) / (2.0 * step))
    }

    /// Probes near the box boundary may leave the box by one FD step; box-only
    /// rules are clamped there.
    fn eval_for_probe(&self, x: &[f64]) -> ModelResult<f64> {
        if self.evaluable_everywhere() {
            self.eval(x)
        } else {
            self.eval_in_box(x)
        }
    }
}

/// Nonlinearity, stencil and physical parameters of one model.
#[derive(Debug, Clone)]
pub struct ModelDescriptor {
    nonlinearity: Nonlinearity,
    stencil: ShiftStencil,
    params: ModelParams,
}

impl ModelDescriptor {
    pub fn new(
        nonlinearity: Nonlinearity,
        stencil: ShiftStencil,
        params: ModelParams,
    ) -> ModelResult<Self> {
        if nonlinearity.arity() != stencil.len() {
            return Err(ModelError::Arity {
                expected: nonlinearity.arity(),
                got: stencil.len(),
            });
        }
        Ok(Self {
            nonlinearity,
            stencil,
            params,
        })
    }

    pub fn classical_fk(l: f64, m0: f64) -> ModelResult<Self> {
        if !l.is_finite() {
            return Err(ModelError::Params("L must be finite".into()));
        }
        Self::new(
            Nonlinearity::ClassicalFk { l },
            ShiftStencil::nearest_neighbour(),
            ModelParams::new(m0)?,
        )
    }

    pub fn cubic_bistable(d: f64, b_param: f64, kappa: f64, m0: f64) -> ModelResult<Self> {
        if !(d.is_finite() && d > 0.0) {
            return Err(ModelError::Params(format!("d must be > 0, got {d}")));
        }
        if !(b_param > 0.0 && b_param < 1.0) {
            return Err(ModelError::Params(format!(
                "b_param must lie in (0,1), got {b_param}"
            )));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(ModelError::Params(format!(
                "kappa must be > 0, got {kappa}"
            )));
        }
        Self::new(
            Nonlinearity::CubicBistable { d, b_param, kappa },
            ShiftStencil::nearest_neighbour(),
            ModelParams::new(m0)?,
        )
    }

    pub fn custom(rule: CustomRule, shifts: Vec<f64>, m0: f64) -> ModelResult<Self> {
        Self::new(
            Nonlinearity::Custom(rule),
            ShiftStencil::new(shifts)?,
            ModelParams::new(m0)?,
        )
    }

    /// The transformed model `F̂(X) = −F(1 − X)`, `r̂ = −r`. Reflecting twice
    /// gives back the original model.
    pub fn reflected(&self) -> Self {
        let nonlinearity = match &self.nonlinearity {
            Nonlinearity::Reflected(inner) => (**inner).clone(),
            other => Nonlinearity::Reflected(Box::new(other.clone())),
        };
        Self {
            nonlinearity,
            stencil: self.stencil.negated(),
            params: self.params,
        }
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn stencil(&self) -> &ShiftStencil {
        &self.stencil
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn alpha0(&self) -> f64 {
        self.params.alpha0
    }

    pub fn m0(&self) -> f64 {
        self.params.m0
    }

    pub fn with_m0(&self, m0: f64) -> ModelResult<Self> {
        let mut out = self.clone();
        out.params = ModelParams::new(m0)?;
        Ok(out)
    }

    /// Same model with one named parameter replaced. Accepts `L`, `m0`,
    /// `b_param` and `d`.
    pub fn with_param(&self, name: &str, value: f64) -> ModelResult<Self> {
        if name == "m0" {
            return self.with_m0(value);
        }
        let nonlinearity = replace_param(&self.nonlinearity, name, value)?;
        let out = Self {
            nonlinearity,
            stencil: self.stencil.clone(),
            params: self.params,
        };
        // re-run constructor validation on the touched values
        match out.nonlinearity {
            Nonlinearity::CubicBistable { d, b_param, kappa } => {
                Self::cubic_bistable(d, b_param, kappa, out.m0())?;
            }
            Nonlinearity::ClassicalFk { l } if !l.is_finite() => {
                return Err(ModelError::Params("L must be finite".into()));
            }
            _ => {}
        }
        Ok(out)
    }

    pub fn eval_f(&self, x: &[f64]) -> ModelResult<f64> {
        self.nonlinearity.eval(x)
    }

    pub fn eval_diag(&self, v: f64) -> ModelResult<f64> {
        self.nonlinearity.eval_diag(v)
    }

    /// Stability bound of the explicit lattice integrator, `0.5/α0`.
    pub fn dt_max(&self) -> f64 {
        0.5 / self.params.alpha0
    }

    pub fn describe(&self) -> String {
        let nl = match &self.nonlinearity {
            Nonlinearity::ClassicalFk { l } => format!("classical_fk(L={l})"),
            Nonlinearity::CubicBistable { d, b_param, kappa } => {
                format!("cubic_bistable(d={d}, b_param={b_param}, kappa={kappa})")
            }
            other => other.kind_name(),
        };
        format!("{nl}, m0={}, alpha0={}", self.params.m0, self.params.alpha0)
    }
}

fn replace_param(nl: &Nonlinearity, name: &str, value: f64) -> ModelResult<Nonlinearity> {
    let unknown = || {
        ModelError::Params(format!(
            "parameter `{name}` does not apply to {}",
            nl.kind_name()
        ))
    };
    Ok(match (nl, name) {
        (Nonlinearity::ClassicalFk { .. }, "L") => Nonlinearity::ClassicalFk { l: value },
        (Nonlinearity::CubicBistable { d, kappa, .. }, "b_param") => Nonlinearity::CubicBistable {
            d: *d,
            b_param: value,
            kappa: *kappa,
        },
        (Nonlinearity::CubicBistable { b_param, kappa, .. }, "d") => Nonlinearity::CubicBistable {
            d: value,
            b_param: *b_param,
            kappa: *kappa,
        },
        (Nonlinearity::CubicBistable { d, b_param, .. }, "kappa") => Nonlinearity::CubicBistable {
            d: *d,
            b_param: *b_param,
            kappa: value,
        },
        (Nonlinearity::Reflected(inner), _) => {
            Nonlinearity::Reflected(Box::new(replace_param(inner, name, value)?))
        }
        _ => return Err(unknown()),
    })
}

/// The interior zero `b` of `f` and the slope there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorZero {
    pub b: f64,
    pub fprime_b: f64,
}

/// Locates the unique sign change of `f` in `(0,1)` and refines it by
/// bisection until `|f(b)| ≤ tol`. The change must go from negative to
/// positive with `f'(b) > 0`.
pub fn find_interior_zero(nl: &Nonlinearity, tol: f64) -> ModelResult<InteriorZero> {
    let n = ZERO_SCAN_POINTS;
    let mut samples = Vec::with_capacity(n - 1);
    for k in 1..n {
        let v = k as f64 / n as f64;
        samples.push((v, nl.eval_diag(v)?));
    }
    let nonzero: Vec<(f64, f64)> = samples.iter().copied().filter(|(_, f)| *f != 0.0).collect();
    let changes: Vec<usize> = (1..nonzero.len())
        .filter(|&k| nonzero[k - 1].1.signum() != nonzero[k].1.signum())
        .collect();
    match changes.len() {
        0 => {
            return Err(ModelError::NotBistable(
                "no sign change of f in (0,1)".into(),
            ))
        }
        1 => {}
        count => return Err(ModelError::AmbiguousZero { count }),
    }
    let (mut lo, flo) = nonzero[changes[0] - 1];
    let (mut hi, _) = nonzero[changes[0]];
    if flo > 0.0 {
        return Err(ModelError::NotBistable(format!(
            "f changes sign from + to − near {lo}; the bistable pattern needs f < 0 on (0,b)"
        )));
    }
    let mut b = 0.5 * (lo + hi);
    for _ in 0..200 {
        b = 0.5 * (lo + hi);
        let fb = nl.eval_diag(b)?;
        if fb.abs() <= tol || hi - lo <= f64::EPSILON * 4.0 {
            break;
        }
        if fb < 0.0 {
            lo = b;
        } else {
            hi = b;
        }
    }
    let fprime_b = (nl.eval_diag(b + FD_STEP)? - nl.eval_diag(b - FD_STEP)?) / (2.0 * FD_STEP);
    if fprime_b <= 0.0 {
        return Err(ModelError::NotBistable(format!(
            "f'(b) = {fprime_b} is not positive at b = {b}"
        )));
    }
    Ok(InteriorZero { b, fprime_b })
}

/// Numerical check of assumptions (A), (B), (C) and (D±).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub alpha0: f64,
    pub lipschitz_constant: f64,
    pub offdiag_monotone: bool,
    /// `min 2 ∂F/∂X0` over the sample grid; `monV0_margin = this + α0`.
    pub min_two_dfdx0: f64,
    #[serde(rename = "monV0_margin")]
    pub monv0_margin: f64,
    pub alpha_star: f64,
    pub b: Option<f64>,
    pub fprime_b: Option<f64>,
    pub sign_pattern_ok: bool,
    pub bistable_error: Option<String>,
    pub beta0: f64,
    pub dplus_strict: bool,
    pub dminus_strict: bool,
    pub same_sign_shifts: ShiftSigns,
}

impl AssumptionReport {
    /// Assumption (A): off-diagonal monotonicity and `2 ∂F/∂X0 + α0 > 0`.
    pub fn gate_a(&self) -> bool {
        self.offdiag_monotone && self.monv0_margin > 0.0
    }

    /// Assumption (B): bistable sign pattern with `f'(b) > 0`.
    pub fn gate_b(&self) -> bool {
        self.sign_pattern_ok && self.fprime_b.is_some_and(|d| d > 0.0)
    }

    /// Assumption (C): some positive `β0`.
    pub fn gate_c(&self) -> bool {
        self.beta0 > 0.0
    }

    /// (D+) i) or ii).
    pub fn gate_d_plus(&self) -> bool {
        self.same_sign_shifts == ShiftSigns::AllNonpositive || self.dplus_strict
    }

    /// (D−) i) or ii).
    pub fn gate_d_minus(&self) -> bool {
        self.same_sign_shifts == ShiftSigns::AllNonnegative || self.dminus_strict
    }

    /// First failing gate among (A) and (B), as a human-readable reason.
    pub fn solver_gate_failure(&self) -> Option<String> {
        if !self.offdiag_monotone {
            return Some("assumption (A) violated: F is not nondecreasing in X_i, i != 0".into());
        }
        if self.monv0_margin <= 0.0 {
            return Some(format!(
                "assumption (A) violated: monV0_margin = {} <= 0 (alpha0 = {} <= alpha* = {})",
                self.monv0_margin, self.alpha0, self.alpha_star
            ));
        }
        if !self.gate_b() {
            return Some(format!(
                "assumption (B) violated: {}",
                self.bistable_error
                    .as_deref()
                    .unwrap_or("sign pattern of f fails")
            ));
        }
        None
    }
}

/// Coarse sample of the coordinates `X_1..X_N` on a product grid, or a fixed
/// pseudo-random subset when the product is too large.
fn coarse_combos(n_other: usize, levels: &[f64]) -> Vec<Vec<f64>> {
    if n_other == 0 {
        return vec![vec![]];
    }
    let total = levels
        .len()
        .checked_pow(n_other as u32)
        .unwrap_or(usize::MAX);
    if total <= MAX_COMBOS {
        let mut out = Vec::with_capacity(total);
        for mut idx in 0..total {
            let mut combo = Vec::with_capacity(n_other);
            for _ in 0..n_other {
                combo.push(levels[idx % levels.len()]);
                idx /= levels.len();
            }
            out.push(combo);
        }
        out
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        (0..MAX_COMBOS)
            .map(|_| (0..n_other).map(|_| rng.gen_range(0.0..=1.0)).collect())
            .collect()
    }
}

/// `min over [0,1]^(N+1) of ∂F/∂X0`: grid scan over `X0` for every coarse
/// combination of the other coordinates, then golden-section refinement
/// around the best grid cell.
fn min_dfdx0(nl: &Nonlinearity, grid_density: usize) -> ModelResult<f64> {
    let g = grid_density.max(2);
    let combos = coarse_combos(nl.arity() - 1, &[0.0, 0.25, 0.5, 0.75, 1.0]);
    let mut x = vec![0.0; nl.arity()];
    let mut best = (f64::INFINITY, 0.0, 0usize);
    for (ci, combo) in combos.iter().enumerate() {
        x[1..].copy_from_slice(combo);
        for k in 0..g {
            x[0] = k as f64 / (g - 1) as f64;
            let d = nl.partial(&x, 0)?;
            if d < best.0 {
                best = (d, x[0], ci);
            }
        }
    }
    let (mut value, x0, ci) = best;
    x[1..].copy_from_slice(&combos[ci]);
    let cell = 1.0 / (g - 1) as f64;
    let (mut a, mut b) = ((x0 - cell).max(0.0), (x0 + cell).min(1.0));
    let ratio = (5.0_f64.sqrt() - 1.0) / 2.0;
    let eval_at = |t: f64, x: &mut Vec<f64>| -> ModelResult<f64> {
        x[0] = t;
        nl.partial(x, 0)
    };
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = eval_at(c, &mut x)?;
    let mut fd = eval_at(d, &mut x)?;
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval_at(c, &mut x)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval_at(d, &mut x)?;
        }
        if b - a < 1e-10 {
            break;
        }
    }
    value = value.min(fc).min(fd);
    Ok(value)
}

/// `α* = −2 min ∂F/∂X0`: the smallest `α0` for which `2 ∂F/∂X0 + α0 > 0`
/// holds on the whole box. A nonpositive value means every `α0 > 0` works.
pub fn alpha_star(nl: &Nonlinearity, grid_density: usize) -> ModelResult<f64> {
    Ok(-2.0 * min_dfdx0(nl, grid_density)?)
}

fn diag_strictly_decreasing(
    nl: &Nonlinearity,
    lo: f64,
    beta: f64,
    bases: &[Vec<f64>],
) -> ModelResult<bool> {
    let mut x = vec![0.0; nl.arity()];
    for s in bases {
        let top = s.iter().fold(0.0_f64, |m, v| m.max(*v));
        let len = beta * (1.0 - top);
        if len <= 0.0 {
            continue;
        }
        let mut prev = f64::INFINITY;
        for k in 0..BETA_LINE_POINTS {
            let a = len * k as f64 / (BETA_LINE_POINTS - 1) as f64;
            for (xi, si) in x.iter_mut().zip(s) {
                *xi = lo + beta * si + a;
            }
            let v = nl.eval_for_probe(&x)?;
            if v >= prev {
                return Ok(false);
            }
            prev = v;
        }
    }
    Ok(true)
}

/// Largest `β` (to resolution 1e-4) such that `a ↦ F(X + a·1)` is strictly
/// decreasing for sampled `X` in `[0,β]^(N+1)` and in `[1−β,1]^(N+1)`.
fn find_beta0(nl: &Nonlinearity) -> ModelResult<f64> {
    let bases = coarse_combos(nl.arity(), &[0.0, 1.0 / 3.0, 2.0 / 3.0]);
    let holds = |beta: f64| -> ModelResult<bool> {
        Ok(diag_strictly_decreasing(nl, 0.0, beta, &bases)?
            && diag_strictly_decreasing(nl, 1.0 - beta, beta, &bases)?)
    };
    if !holds(BETA_RESOLUTION)? {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (BETA_RESOLUTION, 0.5);
    if holds(hi)? {
        return Ok(hi);
    }
    while hi - lo > BETA_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Fills every field of [`AssumptionReport`]. `grid_density` is the number of
/// samples on the `X0` axis (at least 16).
pub fn check_assumptions(
    model: &ModelDescriptor,
    grid_density: usize,
) -> ModelResult<AssumptionReport> {
    let nl = &model.nonlinearity;
    let g = grid_density.max(16);
    let arity = nl.arity();
    let alpha0 = model.alpha0();

    let min_d0 = min_dfdx0(nl, g)?;
    let min_two_dfdx0 = 2.0 * min_d0;

    // Lipschitz constant (sup-norm) and off-diagonal signs on a coarser grid.
    let combos = coarse_combos(arity - 1, &[0.0, 0.25, 0.5, 0.75, 1.0]);
    let g_lip = g.min(33);
    let shifts = model.stencil.shifts();
    let mut lipschitz: f64 = 0.0;
    let mut min_offdiag = f64::INFINITY;
    let mut x = vec![0.0; arity];
    for combo in &combos {
        x[1..].copy_from_slice(combo);
        for k in 0..g_lip {
            x[0] = k as f64 / (g_lip - 1) as f64;
            let mut row = 0.0;
            for i in 0..arity {
                let d = nl.partial(&x, i)?;
                row += d.abs();
                if i != 0 {
                    min_offdiag = min_offdiag.min(d);
                }
            }
            lipschitz = lipschitz.max(row);
        }
    }
    let offdiag_monotone = arity == 1 || min_offdiag >= -1e-7;
    let mut dplus_strict = false;
    let mut dminus_strict = false;
    for i in 1..arity {
        if shifts[i] > 0.0 && !dplus_strict {
            dplus_strict = strictly_increasing_in(nl, i, &combos, g_lip)?;
        } else if shifts[i] < 0.0 && !dminus_strict {
            dminus_strict = strictly_increasing_in(nl, i, &combos, g_lip)?;
        }
    }

    let (b, fprime_b, sign_pattern_ok, bistable_error) = match find_interior_zero(nl, ROOT_TOL) {
        Ok(z) => {
            let ok = sign_pattern_holds(nl, z.b)?
                && nl.eval_diag(0.0)?.abs() <= 1e-10
                && nl.eval_diag(1.0)?.abs() <= 1e-10;
            let err = (!ok).then(|| "f(0), f(1) nonzero or sign pattern broken".to_string());
            (Some(z.b), Some(z.fprime_b), ok, err)
        }
        Err(e @ (ModelError::NotBistable(_) | ModelError::AmbiguousZero { .. })) => {
            (None, None, false, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };

    Ok(AssumptionReport {
        alpha0,
        lipschitz_constant: lipschitz,
        offdiag_monotone,
        min_two_dfdx0,
        monv0_margin: min_two_dfdx0 + alpha0,
        alpha_star: -min_two_dfdx0,
        b,
        fprime_b,
        sign_pattern_ok,
        bistable_error,
        beta0: find_beta0(nl)?,
        dplus_strict,
        dminus_strict,
        same_sign_shifts: model.stencil.sign_class(),
    })
}

fn strictly_increasing_in(
    nl: &Nonlinearity,
    i: usize,
    combos: &[Vec<f64>],
    g: usize,
) -> ModelResult<bool> {
    let mut x = vec![0.0; nl.arity()];
    for combo in combos {
        x[1..].copy_from_slice(combo);
        for k in 0..g {
            x[0] = k as f64 / (g - 1) as f64;
            if nl.partial(&x, i)? <= 1e-9 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn sign_pattern_holds(nl: &Nonlinearity, b: f64) -> ModelResult<bool> {
    const K: usize = 200;
    for k in 1..K {
        let t = k as f64 / K as f64;
        if nl.eval_diag(b * t)? >= 0.0 {
            return Ok(false);
        }
        if nl.eval_diag(b + (1.0 - b) * t)? <= 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Checks that `F` carries a usable diagonal-periodic extension:
/// `|F(X + 1) − F(X)|` small and off-diagonal monotonicity at `samples`
/// random points of `[−2,2]^(N+1)`.
pub fn validate_extension(nl: &Nonlinearity, samples: usize, seed: u64) -> ModelResult<bool> {
    let f0 = nl.eval_diag(0.0)?;
    let f1 = nl.eval_diag(1.0)?;
    if (f0 - f1).abs() > 1e-12 * f0.abs().max(f1.abs()).max(1.0) {
        return Err(ModelError::ExtensionPrecondition { f0, f1 });
    }
    if !nl.evaluable_everywhere() {
        return Err(ModelError::ExtensionMissing);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = nl.arity();
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    for _ in 0..samples {
        for v in x.iter_mut() {
            *v = rng.gen_range(-2.0..=2.0);
        }
        let fx = nl.eval(&x)?;
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi = xi + 1.0;
        }
        let fy = nl.eval(&y)?;
        if (fy - fx).abs() > 1e-9 * fx.abs().max(1.0) {
            return Ok(false);
        }
        for i in 1..n {
            y.copy_from_slice(&x);
            y[i] += rng.gen_range(1e-3..=0.5);
            if nl.eval(&y)? < fx - 1e-12 * fx.abs().max(1.0) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fk(l: f64) -> Nonlinearity {
        Nonlinearity::ClassicalFk { l }
    }

    fn cubic(b: f64) -> Nonlinearity {
        Nonlinearity::CubicBistable {
            d: 1.0,
            b_param: b,
            kappa: 1.0,
        }
    }

    #[test]
    fn eval_examples() {
        assert_eq!(fk(0.0).eval(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((fk(0.0).eval(&[0.25, 0.25, 0.25]).unwrap() + 1.0).abs() < 1e-15);
        assert!((cubic(0.25).eval(&[0.5, 0.5, 0.5]).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn eval_diag_examples() {
        assert!(fk(0.1).eval_diag(0.0).unwrap().abs() < 1e-15);
        assert!(fk(0.0).eval_diag(0.5).unwrap().abs() < 1e-15);
        assert_eq!(cubic(0.25).eval_diag(0.25).unwrap(), 0.0);
    }

    #[test]
    fn box_only_rule_rejects_outside_points() {
        let rule = CustomRule::new("box", 3, Extension::None, |x| x[1] + x[2] - 2.0 * x[0]);
        let nl = Nonlinearity::Custom(rule);
        assert!(matches!(
            nl.eval(&[1.2, 0.0, 0.0]),
            Err(ModelError::Domain { .. })
        ));
        assert_eq!(nl.eval_in_box(&[1.2, 1.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            nl.eval(&[0.0, 0.0]),
            Err(ModelError::Arity { .. })
        ));
    }

    #[test]
    fn interior_zero_examples() {
        assert!((find_interior_zero(&fk(0.0), ROOT_TOL).unwrap().b - 0.5).abs() < 1e-12);
        // bisection oracle on f_L; b = 1/2 + 2L analytically
        let z = find_interior_zero(&fk(0.1), ROOT_TOL).unwrap();
        assert!((z.b - 0.7).abs() < 1e-10, "b = {}", z.b);
        assert!(z.fprime_b > 0.0);
        assert!((find_interior_zero(&cubic(0.25), ROOT_TOL).unwrap().b - 0.25).abs() < 1e-12);
    }

    #[test]
    fn interior_zero_errors() {
        // f = cos(2πv) − 1 ≤ 0: no sign change
        assert!(matches!(
            find_interior_zero(&fk(0.25), ROOT_TOL),
            Err(ModelError::NotBistable(_))
        ));
        // reversed pattern for L = 0.3
        assert!(matches!(
            find_interior_zero(&fk(0.3), ROOT_TOL),
            Err(ModelError::NotBistable(_))
        ));
        let wiggly = CustomRule::new("wiggly", 1, Extension::None, |x| (6.0 * PI * x[0]).sin());
        assert!(matches!(
            find_interior_zero(&Nonlinearity::Custom(wiggly), ROOT_TOL),
            Err(ModelError::AmbiguousZero { .. })
        ));
    }

    #[test]
    fn interior_zero_brackets_sign_change() {
        for nl in [fk(0.0), fk(0.05), fk(0.1), fk(0.2), cubic(0.25), cubic(0.6)] {
            let b = find_interior_zero(&nl, ROOT_TOL).unwrap().b;
            let eps = 10.0 * ROOT_TOL.max(1e-9);
            assert!(nl.eval_diag(b - eps).unwrap() < 0.0);
            assert!(nl.eval_diag(b + eps).unwrap() > 0.0);
        }
    }

    /// Dense 1-D oracle: min over 1e5 points of 2 ∂F/∂X0 using the closed form.
    fn oracle_min_two_dfdx0(l: f64) -> f64 {
        (0..=100_000)
            .map(|k| {
                let x0 = k as f64 / 100_000.0;
                2.0 * (-2.0 - 2.0 * PI * (2.0 * PI * (x0 - l)).cos())
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn classical_fk_assumptions() {
        let model = ModelDescriptor::classical_fk(0.0, 0.005).unwrap();
        let rep = check_assumptions(&model, 64).unwrap();
        let expected = 100.0 + oracle_min_two_dfdx0(0.0);
        assert!(
            (rep.monv0_margin - expected).abs() < 1e-6,
            "{}",
            rep.monv0_margin
        );
        assert!((rep.monv0_margin - 83.43).abs() < 0.01);
        assert!(rep.gate_a() && rep.gate_b() && rep.gate_c());
        assert!(rep.dplus_strict && rep.dminus_strict);
        assert_eq!(rep.same_sign_shifts, ShiftSigns::Mixed);
        // 33-point lines overshoot the flat extremum at 0.25 slightly
        assert!((rep.beta0 - 0.25).abs() < 5e-3, "beta0 = {}", rep.beta0);

        let heavy = ModelDescriptor::classical_fk(0.0, 0.05).unwrap();
        let rep = check_assumptions(&heavy, 64).unwrap();
        assert!((rep.monv0_margin - (10.0 + oracle_min_two_dfdx0(0.0))).abs() < 1e-6);
        assert!(rep.monv0_margin < 0.0 && !rep.gate_a());
        assert!(rep.solver_gate_failure().unwrap().contains("(A)"));
    }

    #[test]
    fn cubic_assumptions() {
        let model = ModelDescriptor::cubic_bistable(1.0, 0.25, 1.0, 0.05).unwrap();
        let rep = check_assumptions(&model, 64).unwrap();
        assert!(rep.offdiag_monotone && rep.sign_pattern_ok);
        assert!(rep.monv0_margin > 0.0);
        assert!((rep.b.unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn alpha_star_examples() {
        let a = alpha_star(&fk(0.0), 16).unwrap();
        assert!((a - (4.0 + 4.0 * PI)).abs() < 1e-6, "alpha* = {a}");
        // 1-D oracle: α* = 2(2d + κ max(−p')) with p(v) = v(v−b)(1−v)
        let b = 0.25;
        let max_neg_pprime = (0..=100_000)
            .map(|k| {
                let v = k as f64 / 100_000.0;
                3.0 * v * v - 2.0 * (1.0 + b) * v + b
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let a = alpha_star(&cubic(b), 32).unwrap();
        assert!(
            (a - 2.0 * (2.0 + max_neg_pprime)).abs() < 1e-6,
            "alpha* = {a}"
        );
        let linear = CustomRule::new("linear", 3, Extension::DiagonalPeriodic, |x| {
            x[1] + x[2] - 2.0 * x[0]
        });
        let a = alpha_star(&Nonlinearity::Custom(linear), 16).unwrap();
        assert!((a - 4.0).abs() < 1e-8);
    }

    #[test]
    fn alpha_star_independent_of_l() {
        for l in [0.0, 0.05, 0.1, 0.2] {
            let a = alpha_star(&fk(l), 16).unwrap();
            assert!((16.56..=16.58).contains(&a), "L = {l}: {a}");
        }
    }

    #[test]
    fn margin_is_affine_in_alpha0() {
        let base =
            check_assumptions(&ModelDescriptor::classical_fk(0.1, 0.005).unwrap(), 32).unwrap();
        for delta in [0.5, 3.0, 17.25] {
            let alpha = base.alpha0 + delta;
            let m = ModelDescriptor::classical_fk(0.1, 1.0 / (2.0 * alpha)).unwrap();
            let rep = check_assumptions(&m, 32).unwrap();
            let diff = rep.monv0_margin - base.monv0_margin;
            assert!(
                (diff - delta).abs() <= 1e-12 * rep.alpha0,
                "{diff} vs {delta}"
            );
        }
    }

    #[test]
    fn extension_examples() {
        assert!(validate_extension(&fk(0.2), 200, 1).unwrap());
        assert!(!validate_extension(&cubic(0.25), 200, 1).unwrap());
        let bad = CustomRule::new("bad", 3, Extension::None, |x| x[0]);
        assert!(matches!(
            validate_extension(&Nonlinearity::Custom(bad), 10, 1),
            Err(ModelError::ExtensionPrecondition { .. })
        ));
        let boxed = CustomRule::new("box", 3, Extension::None, |x| x[1] + x[2] - 2.0 * x[0]);
        assert!(matches!(
            validate_extension(&Nonlinearity::Custom(boxed), 10, 1),
            Err(ModelError::ExtensionMissing)
        ));
    }

    #[test]
    fn reflection_of_cubic_swaps_b() {
        let m = ModelDescriptor::cubic_bistable(1.0, 0.25, 1.0, 0.05).unwrap();
        let r = m.reflected();
        let b_hat = find_interior_zero(r.nonlinearity(), ROOT_TOL).unwrap().b;
        assert!((b_hat - 0.75).abs() < 1e-12);
        assert_eq!(r.stencil().shifts(), &[0.0, -1.0, 1.0]);
        assert!(matches!(
            r.reflected().nonlinearity(),
            Nonlinearity::CubicBistable { .. }
        ));
    }

    #[test]
    fn reflected_fk_is_fk_with_negated_l() {
        let r = ModelDescriptor::classical_fk(0.2, 0.005)
            .unwrap()
            .reflected();
        let other = fk(-0.2);
        for x in [[0.1, 0.3, 0.0], [0.7, 0.9, 0.2], [0.5, 0.5, 0.5]] {
            // F̂(X0, X−, X+) with reversed stencil ordering
            let a = r.eval_f(&x).unwrap();
            let b = other.eval(&x).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stencil_validation() {
        assert!(ShiftStencil::new(vec![1.0, 0.0]).is_err());
        assert!(ShiftStencil::new(vec![0.0]).is_err());
        let s = ShiftStencil::new(vec![0.0, 0.5, -1.0]).unwrap();
        assert_eq!(s.r_star(), 1.0);
        assert!(!s.integer_only());
        assert_eq!(
            ShiftStencil::new(vec![0.0, -1.0, -2.0])
                .unwrap()
                .sign_class(),
            ShiftSigns::AllNonpositive
        );
    }

    #[test]
    fn params_derive_alpha0() {
        let p = ModelParams::new(0.005).unwrap();
        assert_eq!(p.alpha0(), 100.0);
        assert!(ModelParams::new(0.0).is_err());
        assert_eq!(ModelParams::from_alpha0(10.0).unwrap().m0(), 0.05);
    }

    proptest! {
        #[test]
        fn fk_diag_is_one_periodic(l in -0.3f64..0.3, v in -3.0f64..3.0) {
            let nl = fk(l);
            let a = nl.eval_diag(v).unwrap();
            let b = nl.eval_diag(v + 1.0).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn offdiag_monotone_at_probes(
            l in -0.2f64..0.2,
            x in prop::array::uniform3(0.0f64..1.0),
            i in 1usize..3,
            dx in 1e-4f64..0.5,
        ) {
            for nl in [fk(l), cubic(0.25 + l.abs())] {
                let mut y = x;
                y[i] += dx;
                prop_assert!(nl.eval(&y).unwrap() >= nl.eval(&x).unwrap());
            }
        }
    }
}
