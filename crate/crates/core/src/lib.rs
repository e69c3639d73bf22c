pub mod error;
pub mod grid;
pub mod model;
pub mod timechange;
pub mod integrator;
pub mod io;
pub mod comparison;
pub mod dissipativity;
pub mod attractor;
pub mod cli;
pub mod suite;

pub use error::{Error, Result};
