//! Linear first-order hyperbolic systems on the unit strip with reflection
//! boundary conditions: characteristics, dissipativity checks, time stepping,
//! periodic and bounded solutions, spectra and resolvents.

pub mod characteristics;
pub mod dissipativity;
pub mod error;
pub mod evolution;
pub mod expr;
mod linalg;
pub mod periodic;
pub mod lyapunov;
pub mod presets;
pub mod resolvent;
pub mod spectral;
pub mod system;

pub use error::{Error, Result};
pub use expr::{Expr, Var};
pub use system::{Field, HyperbolicSystem, Probe};
