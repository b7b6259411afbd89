// `!(x > 0.0)` is used on purpose to reject NaN along with non-positives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod gp;
pub mod grid;
pub mod morse;
pub mod mvmap;
mod par;
pub mod pipeline;

pub use error::{Error, Result};
pub use grid::{CellId, CubicalGrid, Intersection, StateBox};
