//! Design-based estimation of exposure effects on networks with
//! approximate neighborhood interference.

pub mod design;
pub mod error;
pub mod estimators;
pub mod exposure;
pub mod graph;
pub mod io;
pub mod mc;
pub mod cli;
pub mod netgen;
pub mod outcomes;
pub mod seeds;

pub use error::{Error, Result};
