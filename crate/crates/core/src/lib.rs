//! Pseudo-spectral simulation of the incompressible Navier-Stokes /
//! Q-tensor system on the unit periodic square, with diagnostics that
//! measure the energy law, the higher-order energy identity and decay to
//! equilibrium.
//!
//! The Q-tensor is stored as two scalars, `Q = [[p, q], [q, -p]]`.

pub mod cli_io;
pub mod coupling;
pub mod diagnostics;
pub mod energetics;
pub mod error;
pub mod fields;
pub mod init;
pub mod spectral;
pub mod stepper;

pub use error::{Error, Result};
pub use fields::{Grid, Mat2, Parameters, QTensorField, SimState, VelocityField};
pub use spectral::Spectral;
