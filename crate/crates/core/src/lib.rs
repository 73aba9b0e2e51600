pub mod datamodel;
pub mod envelope;
pub mod eval;
pub mod error;
pub mod exec;
pub mod harness;
pub mod imputers;
pub mod landmark;
pub mod rng;
pub mod solvers;
pub mod synthgen;

pub use error::{Error, Result};
