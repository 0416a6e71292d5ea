//! Exact discrete models of restricted directional maximal operators along
//! one-variable vector fields.

pub mod badness;
pub mod dyadic;
pub mod error;
pub mod experiments;
pub mod family;
pub mod geometry;
pub mod grid;
pub mod instances;
pub mod kernel;
pub mod maximal;
pub mod offdiag;
pub mod oracle;
pub mod stopping;
pub mod verify;

pub use dyadic::{DyadicInterval, DyadicRational, SlopeCell, Window};
pub use error::{Error, Result};
pub use family::{FamilyParams, RectangleFamily};
pub use geometry::Parallelogram;
pub use grid::{CellSet, GridFunction, GridSpec, OffsetStep, OneVarField};
