//! Simulator for the parallel external memory machine and the algorithms,
//! games and reductions built on it.

pub mod error;
pub mod machine;

pub use error::{Error, Result};
pub use machine::*;
pub mod cost;
pub mod sort;
pub mod variants;
pub mod permute;
pub mod pn;
pub mod list;
pub mod gif;
pub mod reductions;
pub mod sweep;
