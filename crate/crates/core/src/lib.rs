//! Advection of arbitrary sets by characteristic mapping.
//!
//! A coarse working map is advected with gradient-augmented semi-Lagrangian
//! steps and periodically composed into a fine global map; any set is then
//! evaluated by pulling points back through the global map.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cm;
pub mod error;
pub mod flow;
pub mod gals;
pub mod hermite;
pub mod io;
mod jet;
pub mod map;
pub mod scalar;
pub mod sets;

pub use cm::{cm_run, CmConfig, CmSolver, MapState};
pub use error::{Error, Result};
pub use flow::{ParticleSet, VelocityField};
pub use gals::GalsConfig;
pub use hermite::{Boundary, GridGeometry, HermiteField};
pub use map::MapField;
pub use scalar::{Point, Scalar};
pub use sets::SetFunction;

pub type Grid2 = GridGeometry<f64, 2>;
pub type Grid3 = GridGeometry<f64, 3>;
pub type Field2 = HermiteField<f64, 2>;
pub type Field3 = HermiteField<f64, 3>;
pub type Map2 = MapField<f64, 2>;
pub type Map3 = MapField<f64, 3>;
pub type State2 = MapState<f64, 2>;
pub type State3 = MapState<f64, 3>;
