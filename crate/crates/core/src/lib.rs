//! Shooting, bifurcation detection and conjugate loci for Hamiltonian
//! boundary value problems on symplectic and non-symplectic discretisations.

pub mod bvp;
pub mod catastrophe;
pub mod cli;
pub mod georattle;
pub mod error;
pub mod export;
pub mod integrate;
pub mod jets;
pub mod linalg;
pub mod scenario;
pub mod singular;
pub mod systems;

pub use error::{Error, Result};
