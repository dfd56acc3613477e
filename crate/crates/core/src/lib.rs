//! Periodic crystal solutions, Floquet modes and Floquet-Lyapunov transforms
//! for ions in rf quadrupole traps.
//!
//! Time is the rescaled time in which the rf period is `pi`. Lengths are in
//! units of `(e^2 / m w^2)^(1/3)` for the chosen characteristic frequency `w`.

// `!(x <= tol)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod floquet;
pub mod integrator;
pub mod linalg;
pub mod linearization;
pub mod orbit;
pub mod pseudo;
pub mod sweep;
pub mod trap;

pub use error::{Error, Result};
pub use integrator::{IntegratorSettings, Monodromy};
pub use linearization::HillSystem;
pub use orbit::{PeriodicOrbit, RelaxSettings};
pub use trap::{Geometry, IonState, TrapConfig};
