pub mod analysis;
pub mod branching;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod model;
pub mod moments;
pub mod rng;
pub mod semigroup;

pub use error::{Error, Result};
pub use grid::{Boundary, Grid};
