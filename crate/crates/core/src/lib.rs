//! Communication-sparsified surplus consensus and variance-reduced gradient
//! tracking over time-varying directed graphs.

pub mod engines;
pub mod harness;
pub mod error;
pub mod mixing;
pub mod objectives;
pub mod rng;
pub mod sparsifier;
pub mod theory;
pub mod topology;

pub use error::{Error, Result};
