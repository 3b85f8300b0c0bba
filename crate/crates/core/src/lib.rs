//! Traveling waves of the damped-inertial Frenkel-Kontorova lattice.
//!
//! The second-order chain `m0 u'' + u' = F((u_{i+r_j})_j)` is handled through
//! its monotone first-order form in the variables `(u, Ξ)` with
//! `Ξ = u + 2 m0 u'`:
//!
//! ```text
//! du_i/dt = α0 (Ξ_i − u_i)
//! dΞ_i/dt = 2 F((u_{i+r_j})_j) + α0 (u_i − Ξ_i),      α0 = 1 / (2 m0)
//! ```
//!
//! Traveling waves `u_i(t) = φ1(i + c t)`, `Ξ_i(t) = φ2(i + c t)` solve the
//! advance-delay system
//!
//! ```text
//! c φ1'(z) = α0 (φ2 − φ1)
//! c φ2'(z) = 2 F((φ1(z + r_j))_j) + α0 (φ1 − φ2)
//! ```
//!
//! with limits 0 at −∞ and 1 at +∞.
//!
//! Modules:
//! - [`model`]: nonlinearities, stencils and the structural assumption checks.
//! - [`lattice`]: time integration of finite chains, front tracking and
//!   rotation numbers on helical chains.
//! - [`wave`]: direct solvers for the profile system.
//! - [`verify`]: executable property checks (comparison, uniqueness,
//!   monotonicity, reflection, plateaus).
//! - [`config`], [`sweep`], [`output`]: the run-config schema, parameter
//!   sweeps and bit-stable CSV/JSON emission used by the `fkwaves` binary.

pub mod config;
pub mod error;
pub mod lattice;
pub(crate) mod linalg;
pub mod model;
pub mod output;
pub mod sweep;
pub mod verify;
pub mod wave;

pub use error::{Error, Result};
pub use model::{ModelDescriptor, ModelParams, Nonlinearity, ShiftStencil};

/// Fronts slower than this are declared pinned.
pub const PINNING_THRESHOLD: f64 = 1e-4;
