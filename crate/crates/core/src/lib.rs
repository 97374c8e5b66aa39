//! Dynamics on matrix Lie groups: group-affine vector fields, invariant errors
//! and the exact ODE/SDE they induce in Lie-algebra coordinates.
//!
//! The crate is organised bottom-up:
//!
//! - [`algebra`]: group models, `hat`/`vee`, exponential/logarithm, adjoints,
//!   `dexp` series and the Itô correction series.
//! - [`sen3`]: closed forms for `SE_N(3)` (with `SO(3)` as `N = 0`).
//! - [`systems`]: vector fields, linear/affine classification, linearisation
//!   at the identity and state-transition maps.
//! - [`deterministic`]: group ODE integrators, invariant errors and the
//!   algebra-coordinate error ODE.
//! - [`stochastic`]: noise models, Brownian paths, group and algebra SDE
//!   integrators and the error SDE.
//! - [`montecarlo`]: paired-route ensembles and convergence reports.
//! - [`oracles`]: independent brute-force references.

pub mod algebra;
pub mod deterministic;
pub mod error;
pub mod expm;
pub mod montecarlo;
pub mod oracles;
pub mod sen3;
pub mod stochastic;
pub mod systems;

pub use algebra::{AlgebraVector, ClosedForms, DiffusionSide, GroupModel, Structure};
pub use error::{LieError, Result};
