//! Passive scalar transport by a Gaussian velocity field that is white in time
//! and smooth in space.

pub mod corrector;
pub mod covariance;
pub mod error;
pub mod fieldsynth;
pub mod flow;
pub mod grid;
pub mod io;
pub mod gridspde;
pub mod llt;
pub mod moment2;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use error::{Error, ErrorClass, Result};
