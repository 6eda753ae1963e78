//! Slow, obviously-correct reference implementations and random input
//! generators used to cross-check the operator engine and manifest parser.

pub mod cases;
pub mod dates;
pub mod derived;
pub mod gen;
pub mod reference;
pub mod time;

pub use cases::{Case, FilterCond, MapKind, Param, Target};
