//! Continuation of periodic walking gaits for hybrid biped models.
//!
//! Gaits are fixed points of a hybrid Poincaré-type map. Starting from
//! equilibria of the continuous dynamics, [`continuation`] locates the step
//! durations where a family of walking gaits bifurcates from the trivial
//! "standing" gaits and traces those families; [`homotopy`] moves along
//! them to gaits that satisfy user constraints such as a prescribed slope.

// Negated comparisons such as `!(x > 0.0)` deliberately reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod continuation;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod homotopy;
pub mod hybrid;
pub mod linalg;
pub mod models;
pub mod ode;

pub use continuation::{
    build_family, cm_curve, cm_step, multi_dim, projected_newton, scan_singular, BoxBounds,
    ContinuationMap, MapKind, ResidualMap,
};
pub use dynamics::{HybridModel, ModelDims, RobotState};
pub use error::{Error, Result};
pub use hybrid::{flow, jacobian, periodicity, GaitPoint};
