pub mod cli;
pub mod decayfit;
pub mod error;
pub mod numeric;
pub mod observables;
pub mod orbits;
pub mod potential;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
