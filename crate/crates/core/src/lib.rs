//! Simulation and numerics for branching diffusions, their superprocess
//! limits, Feynman–Kac functionals and the cumulant equation.

pub mod acceptance;
pub mod branching;
pub mod campaign;
pub mod cumulant_pde;
pub mod error;
pub mod growth;
pub mod io;
pub mod model;
pub mod motion;
pub mod particles;
pub mod rng;
pub mod schroedinger;
pub mod stats;
pub mod superprocess;

pub use error::{Error, Result};
