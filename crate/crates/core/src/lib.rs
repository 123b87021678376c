//! Numerical laboratory for radial focusing nonlinear Klein-Gordon equations
//! `u_tt - Δu + u = f'(u)`: ground states, variational classification of
//! initial data, and long-time evolution with blow-up / scattering diagnostics.

pub mod classifier;
pub mod data;
pub mod error;
pub mod evolution;
pub mod functionals;
pub mod grid;
pub mod nonlinearity;
pub mod ground_state;
pub mod spectral;
mod tm;

pub use error::{LabError, Result};
pub use grid::{make_grid, RadialGrid, RadialState};
pub use nonlinearity::{NonlinearityKind, NonlinearityModel};
